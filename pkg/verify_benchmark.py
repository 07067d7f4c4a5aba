"""
Verification Script for the DPU Navigation Benchmark

Long-running end-to-end checks that are too slow for the unit test suite:

1. Determinism: two 50-episode terrestrial runs with the same seed write
   byte-identical episodes.csv files
2. Learning smoke test: eta=8, 500 terrestrial episodes beat a uniform-random
   policy and reach >= 30% greedy success
3. Generalization trend: eta in {2, 8}, 1000 episodes x 3 seeds; the mean
   train-to-eval success drop for eta=8 should not exceed that for eta=2.
   This check is statistical; an inverted ordering is reported, not failed.

Usage:
    python verify_benchmark.py                # all checks
    python verify_benchmark.py determinism    # one check by name
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from layer4_harness import ExperimentConfig, evaluate, evaluate_random_policy, sweep, train


def terrestrial_config(**overrides) -> ExperimentConfig:
    return ExperimentConfig.from_file("terrestrial").with_overrides(**overrides)


def test_determinism():
    """Two identical seeded runs must write the same bytes."""
    print("\n" + "=" * 60)
    print("TEST 1: Determinism (terrestrial, 50 episodes)")
    print("=" * 60)

    config = terrestrial_config(train_episodes=50, seed=7)
    with tempfile.TemporaryDirectory() as tmp:
        train(config, out_dir=Path(tmp) / "a", verbose=False)
        train(config, out_dir=Path(tmp) / "b", verbose=False)
        first = (Path(tmp) / "a" / "episodes.csv").read_bytes()
        second = (Path(tmp) / "b" / "episodes.csv").read_bytes()

    assert first == second, "❌ FAIL: episodes.csv differs between two runs with the same seed"
    print(f"\n✅ PASS: episodes.csv byte-identical ({len(first)} bytes)")
    return True


def test_learning_smoke():
    """eta=8 must learn something on the training scenario."""
    print("\n" + "=" * 60)
    print("TEST 2: Learning Smoke Test (terrestrial, eta=8, 500 episodes)")
    print("=" * 60)

    seed = 0
    config = terrestrial_config(train_episodes=500, seed=seed, td3={"eta": 8})
    result = train(config, verbose=True)
    final_ma = float(np.mean(result.rewards[-50:]))

    baseline = evaluate_random_policy(config.env_spec(), config.train_scenario, episodes=50, seed=seed)
    greedy = evaluate(result.agent, config.train_scenario, episodes=100, seed=seed,
                      mode=config.mode, verbose=False)

    print(f"\n   Final 50-episode MA reward: {final_ma:.2f}")
    print(f"   Random policy mean reward:  {baseline.report.er_mean:.2f}")
    print(f"   Greedy success rate:        {greedy.report.success_rate:.2f}%")

    assert final_ma > baseline.report.er_mean, "❌ FAIL: trained policy does not beat the random baseline"
    assert greedy.report.success_rate >= 30.0, "❌ FAIL: greedy success rate below 30%"
    print("\n✅ PASS: agent learns on the desk-scale task")
    return True


def test_generalization_trend():
    """Larger eta should generalize no worse; inverted ordering is reported."""
    print("\n" + "=" * 60)
    print("TEST 3: Generalization Trend (eta 2 vs 8, 1000 episodes x 3 seeds)")
    print("=" * 60)

    template = terrestrial_config(train_episodes=1000)
    report = sweep(template, etas=(2, 8), seeds=(0, 1, 2), workers=3, verbose=True)
    assert not report.failed_cells, f"❌ FAIL: {len(report.failed_cells)} sweep cell(s) failed"

    drop_2 = report.mean_drop(2)
    drop_8 = report.mean_drop(8)
    print(f"\n   Mean success drop, eta=2: {drop_2:.2f} points")
    print(f"   Mean success drop, eta=8: {drop_8:.2f} points")

    if drop_8 <= drop_2:
        print("\n✅ PASS: eta=8 generalizes at least as well as eta=2")
    else:
        print("\n⚠️  ORDERING INVERTED: eta=8 dropped more than eta=2 on these 3 seeds.")
        print("   Reported as a documented statistical outcome, not a failure.")
    return True


CHECKS = [
    ("determinism", "Determinism", test_determinism),
    ("learning", "Learning Smoke Test", test_learning_smoke),
    ("generalization", "Generalization Trend", test_generalization_trend),
]


def main(argv=None):
    """Run the requested verification checks."""
    argv = sys.argv[1:] if argv is None else argv
    selected = [c for c in CHECKS if not argv or c[0] in argv]

    print("\n" + "=" * 60)
    print("DPU NAVIGATION BENCHMARK - VERIFICATION SUITE")
    print("=" * 60)

    passed = 0
    failed = 0
    for _, test_name, test_func in selected:
        try:
            test_func()
            passed += 1
        except AssertionError as e:
            print(f"\n❌ FAILED: {test_name}")
            print(f"   Error: {e}")
            failed += 1
        except Exception as e:
            print(f"\n❌ ERROR in {test_name}: {type(e).__name__}: {e}")
            failed += 1

    print("\n" + "=" * 60)
    print("VERIFICATION SUMMARY")
    print("=" * 60)
    print(f"\n✅ Passed: {passed}/{len(selected)}")
    print(f"❌ Failed: {failed}/{len(selected)}")

    if failed == 0:
        print("\n🎉 ALL CHECKS PASSED!\n")
        return 0
    print(f"\n⚠️  {failed} check(s) failed. Please review the errors above.\n")
    return 1


if __name__ == "__main__":
    sys.exit(main())

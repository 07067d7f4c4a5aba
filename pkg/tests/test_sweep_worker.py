import unittest
import queue
import sys
import os
import threading
from unittest.mock import patch

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from sweep_worker import CellStatus, SweepCell, SweepWorker, run_cells


class TestSweepWorker(unittest.TestCase):
    def test_run_cells_preserves_order(self):
        cells = [SweepCell(eta=e, seed=s) for e in (2, 4, 8) for s in (0, 1)]
        run_cells(cells, lambda cell: cell.eta * 10 + cell.seed, workers=3, verbose=False)
        self.assertEqual([c.result for c in cells], [20, 21, 40, 41, 80, 81])
        self.assertTrue(all(c.status is CellStatus.COMPLETED for c in cells))
        self.assertEqual(cells[0].cell_id, "eta2_seed0")
        print("Test 1: Parallel Cells Passed")

    def test_failure_is_recorded_and_others_continue(self):
        def run(cell):
            if cell.eta == 4:
                raise RuntimeError("boom")
            return cell.eta

        cells = [SweepCell(eta=e, seed=0) for e in (2, 4, 8)]
        run_cells(cells, run, workers=1, verbose=False)
        self.assertEqual([c.status for c in cells], [CellStatus.COMPLETED, CellStatus.FAILED, CellStatus.COMPLETED])
        self.assertEqual(cells[1].error_message, "RuntimeError: boom")
        self.assertIsNone(cells[1].result)
        print("Test 2: Failure Isolation Passed")

    def test_invalid_worker_count(self):
        with self.assertRaises(ValueError):
            run_cells([SweepCell(2, 0)], lambda c: None, workers=0, verbose=False)

    def test_stop_marks_running_and_queued_cells(self):
        started = threading.Event()
        release = threading.Event()

        def run(cell):
            started.set()
            release.wait(timeout=5)
            return cell.eta

        cell_queue = queue.Queue()
        cells = [SweepCell(eta=e, seed=0) for e in (2, 4, 8)]
        for cell in cells:
            cell_queue.put(cell)
        worker = SweepWorker(cell_queue, run, verbose=False)
        worker.start()
        self.assertTrue(started.wait(timeout=5))
        self.assertEqual(cells[0].status, CellStatus.RUNNING)

        worker.stop()
        release.set()
        worker.join()
        self.assertEqual([c.status for c in cells], [CellStatus.STOPPED] * 3)
        self.assertIsNone(cells[0].result)
        self.assertEqual(cells[0].error_message, "interrupted")

    def test_ctrl_c_stops_workers_and_marks_cells(self):
        started = threading.Event()
        release = threading.Event()

        def run(cell):
            started.set()
            release.wait(timeout=5)
            return cell.eta

        def interrupted_join(worker):
            started.wait(timeout=5)
            raise KeyboardInterrupt

        cells = [SweepCell(eta=e, seed=0) for e in (2, 4, 8)]
        try:
            with patch.object(SweepWorker, "join", interrupted_join):
                with self.assertRaises(KeyboardInterrupt):
                    run_cells(cells, run, workers=1, verbose=False)
            self.assertEqual([c.status for c in cells], [CellStatus.STOPPED] * 3)
            self.assertTrue(all(c.error_message == "interrupted" for c in cells))
        finally:
            release.set()
        print("Test 3: Interrupted Sweep Passed")

    def test_progress_callback(self):
        seen = []
        cell_queue = queue.Queue()
        for e in (2, 4):
            cell_queue.put(SweepCell(eta=e, seed=0))
        worker = SweepWorker(cell_queue, lambda c: None, on_progress=lambda c: seen.append(c.eta), verbose=False)
        worker.start()
        worker.join()
        self.assertEqual(seen, [2, 4])


if __name__ == '__main__':
    unittest.main()

"""
Sweep Worker - Background Threads for Parallel Sweep Cells

Each (eta, seed) cell of a sweep is independent: it owns its agent, envs,
replay buffer and rng streams. Cells are placed on a shared queue and drained
by a small pool of worker threads; results are reduced afterwards, in cell
order, by the caller.

Architecture:
- Producer (run_cells): enqueues cells, starts workers, joins them
- Consumers (SweepWorker threads): pop a cell, run it, record status/result
- Ctrl-C while waiting stops every worker; cells not yet finished are
  marked STOPPED and the KeyboardInterrupt propagates to the caller

Usage:
    from sweep_worker import SweepCell, run_cells

    cells = [SweepCell(eta=e, seed=s) for e in (2, 4, 8) for s in (0, 1)]
    run_cells(cells, run_fn, workers=3)
    failed = [c for c in cells if c.status is CellStatus.FAILED]
"""

import queue
import threading
import traceback
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, List, Optional

from tqdm import tqdm


class CellStatus(Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"
    STOPPED = "stopped"


@dataclass
class SweepCell:
    """One (eta, seed) training + evaluation job."""
    eta: int
    seed: int
    status: CellStatus = CellStatus.PENDING
    result: Any = None
    error_message: Optional[str] = None

    @property
    def cell_id(self) -> str:
        return f"eta{self.eta}_seed{self.seed}"


class SweepWorker:
    """
    Background thread that drains a queue of sweep cells.

    A failing cell is marked FAILED with its error message; the worker then
    moves on to the next cell. Once stopped, the cell in flight and every
    cell popped afterwards are marked STOPPED.
    """

    def __init__(
        self,
        cell_queue: "queue.Queue[SweepCell]",
        run_fn: Callable[[SweepCell], Any],
        name: str = "sweep_worker",
        on_progress: Optional[Callable[[SweepCell], None]] = None,
        verbose: bool = True,
    ):
        """
        Args:
            cell_queue: shared queue of pending cells
            run_fn: callable executing one cell and returning its result
            name: thread name
            on_progress: optional callback invoked after each finished cell
            verbose: print status lines
        """
        self.cell_queue = cell_queue
        self.run_fn = run_fn
        self.name = name
        self.on_progress = on_progress
        self.verbose = verbose

        self._thread: Optional[threading.Thread] = None
        self._stop_event = threading.Event()
        self._lock = threading.Lock()

        self._current_cell: Optional[SweepCell] = None

    def _log(self, message: str):
        if self.verbose:
            tqdm.write(message)

    def start(self):
        self._stop_event.clear()
        self._thread = threading.Thread(target=self._worker_loop, name=self.name, daemon=True)
        self._thread.start()

    def stop(self):
        """
        Stop taking cells and mark the cell in flight STOPPED.

        Does not wait: a cell already inside run_fn keeps computing, but its
        result is discarded.
        """
        with self._lock:
            self._stop_event.set()
            if self._current_cell is not None:
                _mark_stopped(self._current_cell)
        self._log(f"🛑 [WORKER] Stopping {self.name}...")

    def join(self):
        if self._thread is not None:
            self._thread.join()

    def _worker_loop(self):
        while True:
            try:
                cell = self.cell_queue.get_nowait()
            except queue.Empty:
                return

            with self._lock:
                if self._stop_event.is_set():
                    _mark_stopped(cell)
                    self.cell_queue.task_done()
                    continue
                self._current_cell = cell
                cell.status = CellStatus.RUNNING
            self._log(f"📦 [WORKER] {self.name} running cell {cell.cell_id}")

            try:
                result = self.run_fn(cell)
                with self._lock:
                    if cell.status is CellStatus.RUNNING:
                        cell.result = result
                        cell.status = CellStatus.COMPLETED
                self._log(f"✅ [WORKER] Cell {cell.cell_id} {cell.status.value}")
            except Exception as e:
                with self._lock:
                    if cell.status is CellStatus.RUNNING:
                        cell.status = CellStatus.FAILED
                        cell.error_message = f"{type(e).__name__}: {e}"
                self._log(f"❌ [WORKER] Cell {cell.cell_id} failed: {e}")
                if self.verbose:
                    tqdm.write(traceback.format_exc())
            finally:
                with self._lock:
                    self._current_cell = None
                self.cell_queue.task_done()

            if self.on_progress:
                self.on_progress(cell)


def _mark_stopped(cell: SweepCell):
    cell.status = CellStatus.STOPPED
    cell.error_message = "interrupted"


def _drain(cell_queue: "queue.Queue[SweepCell]"):
    while True:
        try:
            cell = cell_queue.get_nowait()
        except queue.Empty:
            return
        _mark_stopped(cell)
        cell_queue.task_done()


def run_cells(
    cells: List[SweepCell],
    run_fn: Callable[[SweepCell], Any],
    workers: int = 1,
    verbose: bool = True,
) -> List[SweepCell]:
    """
    Execute every cell on `workers` background threads and wait for them.

    Args:
        cells: cells to run (updated in place)
        run_fn: callable executing one cell
        workers: number of threads (>= 1)
        verbose: show a progress bar and status lines

    Returns:
        The same list of cells, in their original order

    Raises:
        KeyboardInterrupt: re-raised after the workers are stopped and every
            unfinished cell is marked STOPPED
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    cell_queue: "queue.Queue[SweepCell]" = queue.Queue()
    for cell in cells:
        cell_queue.put(cell)

    progress = tqdm(total=len(cells), desc="sweep cells", disable=not verbose)
    progress_lock = threading.Lock()

    def _tick(_cell):
        with progress_lock:
            progress.update(1)

    pool = [
        SweepWorker(cell_queue, run_fn, name=f"sweep_worker_{i}", on_progress=_tick, verbose=verbose)
        for i in range(min(workers, max(len(cells), 1)))
    ]
    if verbose:
        tqdm.write(f"🚀 [WORKER] {len(cells)} cells on {len(pool)} worker thread(s)")
    for worker in pool:
        worker.start()
    try:
        for worker in pool:
            worker.join()
    except KeyboardInterrupt:
        for worker in pool:
            worker.stop()
        _drain(cell_queue)
        progress.close()
        if verbose:
            tqdm.write("🛑 [WORKER] Interrupted: unfinished cells marked stopped")
        raise
    progress.close()
    return cells

from typing import Optional, Sequence

from rich.console import Console
from rich.markup import escape
from rich.table import Table

from smoothloc.util import format_number, truncate_message

stderr_console = Console(stderr=True)


class ExperimentTracer:
    def __init__(self, console: Optional[Console] = None, verbose: bool = False):
        self.console = console or stderr_console
        self.verbose = verbose

    def on_experiment_start(self, name: str, trials: int) -> None:
        self.console.print(f"[bold blue]Starting[/bold blue] experiment: {name} ({trials} trials)")

    def on_experiment_end(self, name: str, rows: int, errors: int) -> None:
        self.console.print(
            f"[bold green]Finished[/bold green] experiment: {name} ({rows} rows, {errors} errors)"
        )

    def on_trial_error(self, trial: int, message: str) -> None:
        self.console.print(f"[bold red]error:[/bold red] trial {trial}: {escape(truncate_message(message))}")

    def on_row(self, row: Sequence[object]) -> None:
        if self.verbose:
            self.console.print("  " + ", ".join(format_number(v) for v in row))


class SilentTracer(ExperimentTracer):
    def on_experiment_start(self, name: str, trials: int) -> None:
        pass

    def on_experiment_end(self, name: str, rows: int, errors: int) -> None:
        pass

    def on_trial_error(self, trial: int, message: str) -> None:
        pass

    def on_row(self, row: Sequence[object]) -> None:
        pass


def report_table(title: str, values: dict[str, object]) -> Table:
    table = Table(title=title)
    table.add_column("quantity", style="bold")
    table.add_column("value", justify="right")
    for key, value in values.items():
        table.add_row(key, format_number(value))
    return table

from .hrcenternet_cli import ReportPrinter, cli

__all__ = ["cli", "ReportPrinter"]

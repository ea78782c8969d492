#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Console output for the command-line tools."""
import sys
from typing import Any, Dict, List, Optional, Sequence

from colorama import Fore, Style, init
from rich.console import Console
from rich.table import Table


class HoloUI:
    """Coloured status lines and rich tables."""

    def __init__(self, symbols: Optional[Dict[str, str]] = None, quiet: bool = False):
        init(autoreset=True)
        self.quiet = quiet
        self.console = Console(stderr=False, highlight=False)
        self.symbols = {
            'success': '✓',
            'error': '✗',
            'warning': '!',
            'info': '>',
        }
        if symbols:
            self.symbols.update(symbols)

    def print_success(self, message: str):
        if not self.quiet:
            print(f"{Fore.GREEN}{self.symbols['success']} {message}{Style.RESET_ALL}")

    def print_error(self, message: str):
        print(f"{Fore.RED}{self.symbols['error']} {message}{Style.RESET_ALL}", file=sys.stderr)

    def print_warning(self, message: str):
        if not self.quiet:
            print(f"{Fore.YELLOW}{self.symbols['warning']} {message}{Style.RESET_ALL}")

    def print_info(self, message: str):
        if not self.quiet:
            print(f"{Fore.BLUE}{self.symbols['info']} {message}{Style.RESET_ALL}")

    def show_table(self, title: str, rows: List[Dict[str, Any]], columns: Optional[Sequence[str]] = None):
        """Render dict rows; floats get 6 significant digits."""
        if self.quiet or not rows:
            return
        columns = list(columns or rows[0].keys())
        table = Table(title=title, header_style="bold cyan")
        for col in columns:
            table.add_column(col, justify="right")
        for row in rows:
            table.add_row(*[self._fmt(row.get(col, '')) for col in columns])
        self.console.print(table)

    @staticmethod
    def _fmt(value: Any) -> str:
        if isinstance(value, float):
            return f"{value:.6g}"
        return str(value)

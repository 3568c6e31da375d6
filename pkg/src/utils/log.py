"""ロガー生成（rich で stderr に出力）"""
import logging
import os

from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler

load_dotenv()

# CLI の表示も同じ stderr コンソールを使う（stdout はサマリー1行専用）
console = Console(stderr=True)

_configured = False


def _configure_root() -> None:
    global _configured
    if _configured:
        return
    level = os.environ.get("NUQ_LOG_LEVEL", "INFO").upper()
    handler = RichHandler(console=console, show_path=False, rich_tracebacks=False)
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    root = logging.getLogger("nuq")
    root.addHandler(handler)
    root.setLevel(level)
    root.propagate = False
    _configured = True


def get_logger(name: str) -> logging.Logger:
    _configure_root()
    return logging.getLogger(f"nuq.{name}")

"""
サブコマンド共通の処理

- --config / -o(--set) / --show-config の共通オプション
- 例外 → 終了コード（設定・データ形式・ファイルなし = 2、それ以外 = 1）
- stdout には key=value のサマリーを 1 行だけ出す（表示は stderr のコンソール）
"""
from contextlib import contextmanager
from typing import Iterator

import click

from ..config import config_keys_help, config_to_text
from ..errors import ConfigError, DatasetFormatError, NonFiniteLossError
from ..utils.log import console

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def config_options(cls: type):
    """設定ファイル・上書き指定・--show-config を付けるデコレータ"""
    def decorator(func):
        func = click.option("--show-config", "show_config_flag", is_flag=True, default=False,
                            help="有効な設定を key=value 形式で表示して終了")(func)
        func = click.option("--set", "-o", "overrides", multiple=True, metavar="KEY=VALUE",
                            help="設定の上書き（複数指定可）。" + config_keys_help(cls))(func)
        func = click.option("--config", "-c", "config_path", type=click.Path(dir_okay=False), default=None,
                            help="key=value 形式の設定ファイル")(func)
        return func
    return decorator


def show_config(cfg) -> None:
    click.echo(config_to_text(cfg), nl=False)


def print_summary(**fields) -> None:
    click.echo(" ".join(f"{key}={value}" for key, value in fields.items()))


@contextmanager
def handle_errors() -> Iterator[None]:
    try:
        yield
    except ConfigError as e:
        field = f" [dim](field={e.field})[/dim]" if e.field else ""
        console.print(f"[red]設定エラー: {e}[/red]{field}")
        raise SystemExit(EXIT_CONFIG)
    except DatasetFormatError as e:
        console.print(f"[red]データセットの形式エラー: {e}[/red]")
        raise SystemExit(EXIT_CONFIG)
    except FileNotFoundError as e:
        console.print(f"[red]ファイルが見つかりません: {e}[/red]")
        raise SystemExit(EXIT_CONFIG)
    except NonFiniteLossError as e:
        console.print(f"[red]学習を中断しました: {e}[/red]")
        console.print(f"  → 直前のチェックポイント: {e.checkpoint_path}")
        console.print(f"  → 診断ダンプ: {e.dump_path}")
        raise SystemExit(EXIT_RUNTIME)
    except (SystemExit, click.exceptions.Exit, click.ClickException):
        raise
    except Exception as e:
        console.print(f"[red]エラー: {e}[/red]")
        raise SystemExit(EXIT_RUNTIME)

"""
例外クラス定義

CLI 側では ConfigError / DatasetFormatError を終了コード 2、
それ以外を終了コード 1 として扱う。
"""
from typing import Optional


class NUQError(Exception):
    """このパッケージが送出する例外の基底クラス"""


class ConfigError(NUQError, ValueError):
    """設定値の不正（未知のキー・範囲外の値・resume 時の不一致など）"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class ShapeError(NUQError, ValueError):
    """テンソル形状の不一致"""


class DomainError(NUQError, ValueError):
    """分布の台の外の値・非正の分散・非有限値"""


class DatasetFormatError(NUQError, ValueError):
    """データセットディレクトリの破損（manifest 不正・フレーム数不一致）"""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{message} ({path})" if path else message)
        self.path = path


class SamplingStarvationError(NUQError, RuntimeError):
    """棄却サンプリングが上限回数までに受理されなかった"""


class NonFiniteLossError(NUQError, RuntimeError):
    """学習中に非有限の損失が出た"""

    def __init__(self, message: str, checkpoint_path: Optional[str] = None,
                 dump_path: Optional[str] = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
        self.dump_path = dump_path

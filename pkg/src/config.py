"""
フラットな key=value 設定ファイルの読み書き

設定ファイルは .env と同じ書式（# コメント・空行可）なので dotenv で読む。
各セクション（data / train / eval）は dataclass で定義し、
型は dataclass のフィールド注釈から変換する。
"""
import dataclasses
import typing
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, TypeVar

from dotenv import dotenv_values

from .errors import ConfigError

T = TypeVar("T")

SECTIONS = ("data", "train", "eval")

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _convert(raw: str, typ: Any, key: str) -> Any:
    origin = typing.get_origin(typ)
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        if origin is tuple:
            (inner, *_rest) = typing.get_args(typ)
            items = [s.strip() for s in raw.split(",") if s.strip()]
            return tuple(_convert(s, inner, key) for s in items)
    except ValueError:
        raise ConfigError(f"{key} の値 '{raw}' を {getattr(typ, '__name__', typ)} に変換できません", field=key)
    raise ConfigError(f"{key}: 未対応の型 {typ}", field=key)


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    return str(value)


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"設定ファイルが見つかりません: {path}", field="config")
    values = dotenv_values(path)
    out: dict[str, str] = {}
    for key, val in values.items():
        if val is None:
            raise ConfigError(f"{path}: '{key}' に値がありません（key=value 形式で記述してください）", field=key)
        out[key.strip()] = val.strip()
    return out


def parse_overrides(pairs: Iterable[str], section: str) -> dict[str, str]:
    """`key=value` / `section.key=value` 形式の上書き指定を辞書にする"""
    out: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"上書き指定は key=value 形式で指定してください: '{pair}'", field=pair)
        key, value = pair.split("=", 1)
        key = key.strip()
        if "." in key:
            prefix, key = key.split(".", 1)
            if prefix != section:
                raise ConfigError(
                    f"'{prefix}.{key}' はこのコマンドのセクション '{section}' ではありません", field=key
                )
        out[key] = value.strip()
    return out


def config_from_mapping(cls: type[T], mapping: Mapping[str, str], base: Optional[T] = None) -> T:
    """文字列辞書から dataclass を組み立てる。未知のキーは拒否する"""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - names)
    if unknown:
        raise ConfigError(f"未知の設定キー: {', '.join(unknown)}", field=unknown[0])
    base = base if base is not None else cls()
    updates = {key: _convert(raw, hints[key], key) for key, raw in mapping.items()}
    cfg = dataclasses.replace(base, **updates)
    validate = getattr(cfg, "validate", None)
    if callable(validate):
        validate()
    return cfg


def load_config(
    cls: type[T],
    section: str,
    path: Optional[str | Path] = None,
    overrides: Iterable[str] = (),
    extra: Optional[Mapping[str, Any]] = None,
) -> T:
    """ファイル → 上書き指定 → CLI オプション（extra）の順に適用して検証する"""
    mapping: dict[str, str] = {}
    if path:
        mapping.update(read_config_file(path))
    mapping.update(parse_overrides(overrides, section))
    for key, value in (extra or {}).items():
        if value is not None:
            mapping[key] = _render(value)
    return config_from_mapping(cls, mapping)


def config_to_dict(cfg: Any) -> dict[str, str]:
    return {f.name: _render(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def config_to_text(cfg: Any) -> str:
    lines = [f"{key}={value}" for key, value in config_to_dict(cfg).items()]
    return "\n".join(lines) + "\n"


def config_diff(expected: Mapping[str, str], actual: Mapping[str, str],
                keys: Iterable[str]) -> list[str]:
    """指定キーについて値が異なるものを `key: a != b` 形式で返す"""
    return [
        f"{key}: {expected.get(key)} != {actual.get(key)}"
        for key in keys
        if expected.get(key) != actual.get(key)
    ]


def config_keys_help(cls: type) -> str:
    """--help に載せる設定キー一覧"""
    default = cls()
    rows = [f"{f.name}={_render(getattr(default, f.name))}" for f in dataclasses.fields(cls)]
    return "設定キー（デフォルト値）: " + ", ".join(rows)

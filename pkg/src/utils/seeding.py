"""乱数シードの管理"""
import os
import random
import zlib

import numpy as np
import torch


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    # 文字列キーはプロセスをまたいで安定な crc32 で整数化
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(master: int, *keys) -> int:
    """マスターシードとキー列から独立なサブシードを作る

    同じ (master, keys) からは常に同じ値が返る。
    """
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFF, *(_key_to_int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def make_generator(seed: int, device: torch.device | str = "cpu") -> torch.Generator:
    gen = torch.Generator(device=device)
    gen.manual_seed(int(seed))
    return gen


def seed_everything(seed: int, num_threads: int = 1) -> None:
    """python / numpy / torch の乱数を固定し、決定的な演算を強制する"""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    if num_threads > 0:
        torch.set_num_threads(num_threads)
    os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
    torch.use_deterministic_algorithms(True, warn_only=True)


def resolve_device(name: str | None = None) -> torch.device:
    name = (name or os.environ.get("NUQ_DEVICE", "cpu")).lower()
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)

import hashlib


def stable_hash(text: str, seed: int = 0) -> int:
    """64-bit keyed BLAKE2b hash; identical across processes and platforms."""
    key = int(seed).to_bytes(8, "little", signed=True)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")

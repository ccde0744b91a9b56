import os


def max_workers():
    """Worker cap from the ``FAD_THREADS`` environment variable (default 1)."""
    raw = os.environ.get("FAD_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)

from . import common, dfsmn, rwkv, sanm

__all__ = ["common", "dfsmn", "rwkv", "sanm"]

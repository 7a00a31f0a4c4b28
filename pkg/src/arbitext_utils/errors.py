from typing import Optional


class ArbitextError(ValueError):
    """所有驗證錯誤的根類別，CLI 會將其對應到 exit code 1。"""


class DegenerateQuad(ArbitextError):
    """四邊形的某條邊長度小於 epsilon。"""


class NonConvexQuad(ArbitextError):
    """四邊形在正規化後仍為凹多邊形。"""


class ShapeMismatch(ArbitextError):
    """陣列或網格的形狀與預期不符。"""


class InvalidAnchor(ArbitextError):
    """circle anchor 的面積超過 2r²，arcsin 無定義。"""


class NonFinite(ArbitextError):
    """出現 NaN 或 Inf。"""


class NonPositive(ArbitextError):
    """半徑或面積必須為正。"""


class DegenerateBox(ArbitextError):
    """旋轉矩形的寬或高不為正。"""


class ClassOutOfRange(ArbitextError):
    """類別索引超出 logits 範圍。"""


class MalformedLine(ArbitextError):
    """標註檔的某一行無法解析。"""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


class EmptyResult(ArbitextError):
    """資料增強後沒有任何標註留下。"""


class VersionMismatch(ArbitextError):
    """目標檔版本與程式支援的版本不同。"""


class CorruptFile(ArbitextError):
    """目標檔被截斷或 checksum 不符。"""


class MissingImage(ArbitextError):
    """偵測結果與 ground truth 的影像 id 不一致。"""


class InvalidConfig(ArbitextError):
    """設定檔或 CLI 參數無法通過驗證。"""

import pandas as pd


def format_number(df: pd.DataFrame, num_digits: int = 2) -> pd.DataFrame:
    """浮點欄位轉成千分位字串（bench 報表用），NaN 變成空字串，其他欄位不動。

    Examples
    ---
    >>> format_number(pd.DataFrame({"s": [1234.5]}), 1).loc[0, "s"]
    '1,234.5'
    """
    fmt = f"{{:,.{num_digits}f}}".format
    floats = df.select_dtypes(include="float")
    return df.assign(**{col: floats[col].map(lambda v: "" if pd.isna(v) else fmt(v)) for col in floats.columns})

from typing import Any, Dict, Optional

from pydantic import BaseModel, Field, field_validator


class RunState(BaseModel):
    """CLI の1回の実行を表す状態 (グラフの各ノードが更新する)"""

    command: str = Field(description="サブコマンド名 (= ツール名)")
    args: Dict[str, Any] = Field(default_factory=dict, description="argparse で得たフラグ")
    output_format: str = Field(default="json")
    out_path: Optional[str] = Field(default=None)
    # --- 問題と結果 ---
    problem: Optional[Dict[str, Any]] = Field(default=None, description="ツールに渡す引数 (証明書に埋め込む)")
    result: Optional[Dict[str, Any]] = Field(default=None, description="ツールの出力")
    certificate: Optional[Dict[str, Any]] = Field(default=None)
    started_at: float = Field(default=0.0)
    # --- 失敗時 ---
    error: Optional[str] = Field(default=None)
    exit_code: int = Field(default=0)
    summary: Optional[str] = Field(default=None)

    @field_validator("output_format")
    @classmethod
    def check_format(cls, v: str) -> str:
        if v not in ("json", "csv"):
            raise ValueError(f"output format must be json or csv, got {v!r}")
        return v

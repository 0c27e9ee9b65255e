import os
import logging
from dotenv import load_dotenv

from errors import SettingError

load_dotenv()

logger = logging.getLogger(__name__)

PROJECT_ROOT_DIR = os.path.abspath(os.path.dirname(__file__))
TEMPLATE_DIR = os.path.join(PROJECT_ROOT_DIR, "templates")


def get_float_setting(name: str, default: float) -> float:
    """環境変数から正の実数設定を取得する"""
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = float(raw)
    except ValueError:
        raise SettingError(f"{name} must be a number, got {raw!r}")
    if not value > 0:
        raise SettingError(f"{name} must be positive, got {value}")
    return value


def get_int_setting(name: str, default: int) -> int:
    """環境変数から正の整数設定を取得する"""
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise SettingError(f"{name} must be an integer, got {raw!r}")
    if value <= 0:
        raise SettingError(f"{name} must be positive, got {value}")
    return value


def get_log_level() -> str:
    return os.getenv("LOG_LEVEL", "INFO").upper()


def load_template(name: str) -> str:
    path = os.path.join(TEMPLATE_DIR, f"{name}.txt")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except FileNotFoundError:
        logger.error(f"templates/{name}.txt not found.")
        raise


# ソルバーの既定値 (.env で上書き可能)
DEFAULT_TOLERANCE = get_float_setting("KKM_TOLERANCE", 1e-7)
DEFAULT_BUDGET = get_int_setting("KKM_BUDGET", 40)
BASE_RESOLUTION = get_int_setting("KKM_BASE_RESOLUTION", 8)
MAX_SAMPLES = get_int_setting("KKM_MAX_SAMPLES", 20000)
MAX_BASE_POINTS = get_int_setting("KKM_MAX_BASE_POINTS", 5000)
SQUARE_EPS_FACTOR = get_float_setting("SQUARE_EPS_FACTOR", 1e-6)
LINE_SLACK = get_float_setting("LINE_SLACK", 1e-9)

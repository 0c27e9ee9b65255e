import json
import logging
import sys
import time
from typing import Any, Dict, List, Optional

from langchain_core.prompts import PromptTemplate
from langchain_core.tools import BaseTool
from pydantic import ValidationError

from errors import KkmError, UnsupportedCertificate
from settings import load_template
from state import RunState
from tools.certificates import build_certificate, emit_plot_data, verify_certificate
from tools.io_utils import load_json_file, write_output

logger = logging.getLogger(__name__)

_tool_map: Optional[Dict[str, BaseTool]] = None

SCORE_COMMANDS = ("kkm", "oracle")
FAMILY_COMMANDS = ("cut-lines", "witness", "helly-check")
PLOT_COMMANDS = ("square-partition", "cut-lines")


def set_tool_map_for_nodes(tool_map: Dict[str, BaseTool]):
    global _tool_map
    _tool_map = tool_map


def _with(state: RunState, **updates: Any) -> RunState:
    current_state_dict = state.model_dump()
    current_state_dict.update(updates)
    return RunState(**current_state_dict)


def _parse_quota(text: Optional[str], allow_all: bool) -> Optional[List[int]]:
    if text is None:
        if allow_all:
            return None
        raise ValueError("--quota is required")
    if text.strip().lower() == "all":
        if not allow_all:
            raise ValueError("--quota all is only accepted by square-partition and witness")
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValueError(f"--quota must be a comma separated list of integers, got {text!r}")


def _require(args: Dict[str, Any], *names: str) -> None:
    missing = [f"--{name}" for name in names if args.get(name) is None]
    if missing:
        raise ValueError(f"missing required flag(s): {', '.join(missing)}")


def _score_source(source: str) -> Dict[str, Any]:
    if source in ("canonical", "random"):
        return {"score_kind": source}
    return {"score_kind": "table", "table": load_json_file(source)}


def build_problem(command: str, args: Dict[str, Any]) -> Dict[str, Any]:
    """フラグと入力ファイルからツール引数 (= 証明書の problem) を組み立てる"""
    solver = {"tol": args.get("tol"), "budget": args.get("budget")}
    if command in ("kkm", "colored-kkm", "oracle"):
        _require(args, "n", "m")
        problem = {"n": args["n"], "m": args["m"], "quota": _parse_quota(args.get("quota"), False)}
        scores = args.get("scores") or "canonical"
        if command == "colored-kkm":
            if scores not in ("canonical", "random"):
                raise ValueError("colored-kkm accepts --scores canonical or random")
            problem["score_kind"] = scores
        else:
            problem.update(_score_source(scores))
        problem["seed"] = args.get("seed") or 0
        if command == "oracle":
            problem["resolution"] = args.get("resolution") or 8
            return problem
        return {**problem, **solver}
    if command == "kkm-r":
        _require(args, "n", "r")
        scores = args.get("scores") or "canonical"
        if scores not in ("canonical", "random"):
            raise ValueError("kkm-r accepts --scores canonical or random")
        return {"n": args["n"], "r": args["r"], "score_kind": scores, "seed": args.get("seed") or 0, **solver}
    if command == "square-partition":
        _require(args, "n", "m", "c")
        density = args.get("density") or "uniform"
        return {
            "n": args["n"],
            "m": args["m"],
            "quota": _parse_quota(args.get("quota"), True),
            "c": args["c"],
            "eps": args.get("eps"),
            "density": None if density == "uniform" else load_json_file(density),
            **solver,
        }
    if command in FAMILY_COMMANDS:
        _require(args, "n", "m", "family")
        problem = {"n": args["n"], "m": args["m"], "family": load_json_file(args["family"])}
        if command == "witness":
            problem.update(quota=_parse_quota(args.get("quota"), True), method=args.get("method") or "search", **solver)
        return problem
    raise ValueError(f"unknown command {command!r}")


def load_problem_node(state: RunState) -> RunState:
    logger.debug("--- load_problem_node ---")
    if not _tool_map or state.command not in _tool_map:
        return _with(state, error=f"unknown command {state.command!r}", exit_code=2)
    if state.output_format == "csv" and state.command not in PLOT_COMMANDS:
        return _with(state, error=f"csv output is available for {', '.join(PLOT_COMMANDS)} only", exit_code=2)
    try:
        problem = build_problem(state.command, state.args)
        _tool_map[state.command].args_schema.model_validate(problem)
    except (ValueError, TypeError, ValidationError) as e:
        logger.error(f"invalid input for {state.command}: {e}")
        return _with(state, error=f"invalid input: {e}", exit_code=2)
    return _with(state, problem=problem, started_at=time.perf_counter())


def solve_node(state: RunState) -> RunState:
    logger.debug("--- solve_node ---")
    tool = _tool_map[state.command]
    logger.info(f"Executing tool: {state.command} with args: {str(state.problem)[:200]}")
    try:
        result = tool.invoke(state.problem)
    except (ValueError, TypeError, ValidationError) as e:
        logger.error(f"invalid input for {state.command}: {e}")
        return _with(state, error=f"invalid input: {e}", exit_code=2)
    except KkmError as e:
        logger.error(f"solver failed for {state.command}: {e}", exc_info=True)
        details = f" (best residual {e.residual:.3e})" if getattr(e, "residual", None) is not None else ""
        return _with(state, error=f"{type(e).__name__}: {e}{details}", exit_code=2)
    return _with(state, result=result, exit_code=result["exit_code"])


def verify_node(state: RunState) -> RunState:
    logger.debug("--- verify_node ---")
    seconds = time.perf_counter() - state.started_at
    certificate = build_certificate(state.command, state.problem, state.result, seconds)
    verification = verify_certificate(certificate)
    certificate["verification"] = verification
    if not verification or not all(verification.values()):
        failed = [k for k, ok in verification.items() if not ok]
        logger.error(f"certificate for {state.command} failed verification: {failed}")
        return _with(state, error=f"verification failed: {failed}", exit_code=2)
    if state.exit_code == 2:
        return _with(state, certificate=certificate, error="solver reported a violated statement")
    return _with(state, certificate=certificate)


def emit_node(state: RunState) -> RunState:
    logger.debug("--- emit_node ---")
    certificate = state.certificate
    try:
        if state.output_format == "csv":
            text = emit_plot_data(certificate)
        else:
            text = json.dumps(certificate, indent=2)
    except UnsupportedCertificate as e:
        return _with(state, error=str(e), exit_code=2)
    write_output(text, state.out_path)
    template = PromptTemplate.from_template(load_template("summary"))
    summary = template.format(
        command=certificate["command"],
        outcome=certificate["outcome"],
        alternative=certificate["alternative"],
        path=certificate["path"],
        checks=len(certificate["verification"]),
        seconds=f"{certificate['timing']['seconds']:.3f}",
        exit_code=state.exit_code,
    )
    sys.stderr.write(summary.rstrip("\n") + "\n")
    return _with(state, summary=summary)


def report_error_node(state: RunState) -> RunState:
    logger.debug("--- report_error_node ---")
    template = PromptTemplate.from_template(load_template("error"))
    summary = template.format(command=state.command, error=state.error or "unknown error")
    sys.stderr.write(summary.rstrip("\n") + "\n")
    return _with(state, summary=summary, exit_code=2)

import argparse
import logging
import sys
from typing import Dict, List, Literal, Optional, Sequence

from langchain_core.tools import BaseTool
from langgraph.graph import END, StateGraph

from nodes import (
    emit_node,
    load_problem_node,
    report_error_node,
    set_tool_map_for_nodes,
    solve_node,
    verify_node,
)
from settings import get_log_level
from state import RunState
from tools.certificates import emit_plot_data, verify_certificate  # noqa: F401 (公開 API)
from tools.solver_tools import create_solver_tools

logger = logging.getLogger(__name__)

COMMANDS = ("kkm", "kkm-r", "colored-kkm", "square-partition", "cut-lines", "witness", "helly-check", "oracle")

tool_map: Dict[str, BaseTool] = {tool.name: tool for tool in create_solver_tools()}
set_tool_map_for_nodes(tool_map)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int, help="number of rows / vertical lines")
    common.add_argument("--m", type=int, help="number of columns / horizontal lines")
    common.add_argument("--r", type=int, help="number of simplex factors (kkm-r)")
    common.add_argument("--quota", help="comma separated quotas, or 'all'")
    common.add_argument("--c", type=float, help="mass threshold (square-partition)")
    common.add_argument("--eps", type=float, help="closed-set relaxation (default 1e-6 * c)")
    common.add_argument("--tol", type=float, help="residual tolerance")
    common.add_argument("--budget", type=int, help="refinement levels")
    common.add_argument("--resolution", type=int, help="oracle lattice resolution")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--scores", default="canonical", help="canonical, random or a score table file")
    common.add_argument("--density", default="uniform", help="uniform or a density file")
    common.add_argument("--family", help="family file")
    common.add_argument("--method", choices=["search", "kkm"], default="search")
    common.add_argument("--out", help="write the certificate here instead of stdout")
    common.add_argument("--format", choices=["json", "csv"], default="json")

    parser = argparse.ArgumentParser(prog="kkm", description="KKM-type solvers for products of simplices")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


workflow = StateGraph(RunState)

workflow.add_node("load_problem", load_problem_node)
workflow.add_node("solve", solve_node)
workflow.add_node("verify", verify_node)
workflow.add_node("emit", emit_node)
workflow.add_node("report_error", report_error_node)

workflow.set_entry_point("load_problem")


def select_next_node(state: RunState) -> Literal["report_error", "next"]:
    if state.error:
        logger.debug(f"Conditional edge: routing to report_error ({state.error})")
        return "report_error"
    return "next"


workflow.add_conditional_edges("load_problem", select_next_node, {"report_error": "report_error", "next": "solve"})
workflow.add_conditional_edges("solve", select_next_node, {"report_error": "report_error", "next": "verify"})
workflow.add_conditional_edges("verify", select_next_node, {"report_error": "report_error", "next": "emit"})
workflow.add_conditional_edges("emit", select_next_node, {"report_error": "report_error", "next": END})
workflow.add_edge("report_error", END)

app = workflow.compile()


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run one command and return its exit code."""
    parser = build_parser()
    try:
        ns = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        return int(e.code or 0)
    args = vars(ns)
    state = RunState(
        command=args.pop("command"),
        output_format=args.pop("format"),
        out_path=args.pop("out"),
        args=args,
    )
    try:
        final = app.invoke(state)
    except Exception as e:
        logger.error(f"unexpected failure in {state.command}: {e}", exc_info=True)
        sys.stderr.write(f"[{state.command}] unexpected failure: {e}\n")
        return 2
    return int(final["exit_code"])


def main(argv: Optional[List[str]] = None) -> None:
    logging.basicConfig(level=get_log_level(), stream=sys.stderr)
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

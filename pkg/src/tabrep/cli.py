"""Command-line client for the service.

Every subcommand builds a request to the HTTP API and writes the response
to local files. By default an in-process application instance handles the
request; pass --server to target a running `tabrep serve` instead.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx


class _Parser(argparse.ArgumentParser):
    """argparse, but usage errors exit 1 per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


class _InProcessClient:
    """Sync facade over the ASGI app; one event loop per request."""

    def __init__(self):
        from .service.app import create_app

        self._app = create_app()

    def post(self, path: str, json: dict) -> httpx.Response:
        import asyncio

        async def go():
            transport = httpx.ASGITransport(app=self._app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://tabrep.local", timeout=None
            ) as client:
                return await client.post(path, json=json)

        return asyncio.run(go())

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    return _InProcessClient()


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    response = client.post(path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise RuntimeError(f"{path} failed ({response.status_code}): {detail}")
    return response.json()


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _read_b64(path: str) -> str:
    import base64

    return base64.b64encode(Path(path).read_bytes()).decode("ascii")


def _write_b64(path: str, blob: str) -> None:
    import base64

    Path(path).write_bytes(base64.b64decode(blob))


def _echo_config(config: dict) -> None:
    for key in sorted(config):
        print(f"config.{key}={config[key]}", file=sys.stderr)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    data = json.loads(_read(path))
    if not isinstance(data, dict):
        raise RuntimeError("config file must hold a JSON object")
    return data


def _labels(arg: str | None) -> list[str]:
    return [part for part in arg.split(",")] if arg else []


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tabrep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="random seed")
        p.add_argument("--server", default=None, help="remote service URL (default: in-process)")

    p = sub.add_parser("pretrain", help="self-supervised pretraining over a CSV directory")
    p.add_argument("--data", required=True, help="directory of CSV files")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--steps", type=int, default=None, help="override max_steps")
    p.add_argument("--preset", default=None, help="model preset (tiny/base/large/xlarge)")
    common(p)

    p = sub.add_parser("finetune", help="prompt-based finetuning on a target column")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--target", required=True, help="target column name")
    p.add_argument("--task", required=True, choices=["classify", "regress", "generate"])
    p.add_argument("--labels", default=None, help="comma-separated label set (classify)")
    p.add_argument("--prompt", default=None, help="task-specific prompt override")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    common(p)

    p = sub.add_parser("predict", help="predict the target column for every row")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", default=None, help="defaults to the checkpoint's task")
    p.add_argument("--task", default=None, choices=["classify", "regress", "generate"])
    p.add_argument("--labels", default=None)
    p.add_argument("--out", required=True, help="predictions CSV path")
    common(p)

    p = sub.add_parser("impute", help="fill every missing cell")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="filled CSV path")
    common(p)

    p = sub.add_parser("embed", help="export one row vector per table row")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="embeddings CSV path")
    common(p)

    p = sub.add_parser("eval", help="score a predictions file against gold values")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--metric", required=True, choices=["auc", "r2", "mae", "bleu"])
    p.add_argument("--positive-label", default=None, help="probability column for AUC")
    common(p)

    p = sub.add_parser("inspect", help="print checkpoint config and parameter counts")
    p.add_argument("--ckpt", required=True)
    common(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    common(p)
    return parser


def _cmd_pretrain(args, client) -> int:
    data_dir = Path(args.data)
    csv_paths = sorted(data_dir.glob("*.csv"))
    if not csv_paths:
        raise RuntimeError(f"no CSV files in {data_dir}")
    config = _load_config_file(args.config)
    config["seed"] = args.seed
    if args.steps is not None:
        config["max_steps"] = args.steps
    if args.preset is not None:
        config["preset"] = args.preset
    _echo_config(config)
    payload = {
        "tables": [{"name": p.stem, "csv": _read(str(p))} for p in csv_paths],
        "config": config,
    }
    result = _post(client, "/pretrain", payload)
    _write_b64(args.out, result["checkpoint_b64"])
    for line in result["log"]:
        print(
            f"step={line['step']} objective={line['objective']} loss={line['loss']:.6f}",
            file=sys.stderr,
        )
    print(f"checkpoint={args.out} steps={result['steps']}", file=sys.stderr)
    return 0


def _cmd_finetune(args, client) -> int:
    config = _load_config_file(args.config)
    if args.lr is not None:
        config["finetune_lr"] = args.lr
    _echo_config(config)
    payload = {
        "checkpoint_b64": _read_b64(args.ckpt),
        "train_csv": _read(args.data),
        "target": args.target,
        "task": args.task,
        "labels": _labels(args.labels),
        "prompt": args.prompt,
        "steps": args.steps,
        "seed": args.seed,
        "config": config,
    }
    result = _post(client, "/finetune", payload)
    _write_b64(args.out, result["checkpoint_b64"])
    loss = result.get("final_loss")
    print(
        f"checkpoint={args.out} steps={result['steps']}"
        + (f" final_loss={loss:.6f}" if loss is not None else ""),
        file=sys.stderr,
    )
    return 0


def _cmd_predict(args, client) -> int:
    payload = {
        "checkpoint_b64": _read_b64(args.ckpt),
        "csv": _read(args.data),
        "target": args.target,
        "task": args.task,
        "labels": _labels(args.labels),
    }
    result = _post(client, "/predict", payload)
    Path(args.out).write_text(result["csv"], encoding="utf-8")
    print(f"predictions={args.out} rows={len(result['records'])}", file=sys.stderr)
    return 0


def _cmd_impute(args, client) -> int:
    payload = {"checkpoint_b64": _read_b64(args.ckpt), "csv": _read(args.data)}
    result = _post(client, "/impute", payload)
    Path(args.out).write_text(result["csv"], encoding="utf-8")
    print(f"filled={args.out} cells={result['filled_cells']}", file=sys.stderr)
    return 0


def _cmd_embed(args, client) -> int:
    payload = {"checkpoint_b64": _read_b64(args.ckpt), "csv": _read(args.data)}
    result = _post(client, "/embed", payload)
    Path(args.out).write_text(result["csv"], encoding="utf-8")
    print(f"embeddings={args.out} rows={result['rows']} dim={result['dim']}", file=sys.stderr)
    return 0


def _cmd_eval(args, client) -> int:
    payload = {
        "metric": args.metric,
        "predictions_csv": _read(args.pred),
        "gold_csv": _read(args.gold),
        "positive_label": args.positive_label,
    }
    result = _post(client, "/eval", payload)
    print(f"{result['value']:.4f}")
    return 0


def _cmd_inspect(args, client) -> int:
    payload = {"checkpoint_b64": _read_b64(args.ckpt)}
    result = _post(client, "/inspect", payload)
    for key in ("version", "preset", "vocab_size", "param_count", "param_count_analytic", "step", "seed"):
        print(f"{key}={result[key]}")
    for key, value in sorted(result["config"].items()):
        print(f"config.{key}={value}")
    if result.get("task"):
        print(f"task={json.dumps(result['task'], sort_keys=True)}")
    return 0


def _cmd_serve(args, _client) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "predict": _cmd_predict,
    "impute": _cmd_impute,
    "embed": _cmd_embed,
    "eval": _cmd_eval,
    "inspect": _cmd_inspect,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "serve":
            return _cmd_serve(args, None)
        with _client(args.server) as client:
            return _COMMANDS[args.command](args, client)
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime failures -> exit 2 with a message
        print(f"tabrep {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

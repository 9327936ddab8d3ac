"""HTTP surface: one POST route per enabled role plus /v1/health.

Request bodies are validated against the protocol schemas before any stub
runs; violations come back as 400 with a machine-readable error object.
Content the stubs cannot serve (e.g. an image outside the ground-truth
corpus) maps to the 4xx carried by the stub error; everything else that
breaks is a plain 500.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__, schemas, stubs
from .schemas import ROLES
from .stubs import SceneIndex, StubError

VE_MODES = ("perfect", "always-entailment", "random")
SYNONYM_MODES = ("identity", "lexicon")


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8008
    roles: tuple[str, ...] = ROLES
    scene_dir: Path | None = None
    ve_mode: str = "perfect"
    ve_seed: int = 0
    ve_p: float = 0.25
    synonym_mode: str = "identity"

    def __post_init__(self):
        unknown = set(self.roles) - set(ROLES)
        if unknown:
            raise ValueError(f"unknown roles: {sorted(unknown)}")
        if self.ve_mode not in VE_MODES:
            raise ValueError(f"ve_mode must be one of {VE_MODES}")
        if self.synonym_mode not in SYNONYM_MODES:
            raise ValueError(f"synonym_mode must be one of {SYNONYM_MODES}")
        needs_scenes = {"detect", "ground"} & set(self.roles)
        if needs_scenes and self.scene_dir is None:
            raise ValueError("detect/ground roles require --scene-dir")


def create_app(config: ServerConfig) -> FastAPI:
    app = FastAPI(title="veraser-server", version=__version__)
    index = SceneIndex(config.scene_dir) if config.scene_dir else None
    synonym_fn = (
        stubs.synonym_identity_stub
        if config.synonym_mode == "identity"
        else stubs.synonym_lexicon_stub
    )

    handlers = {
        "extract": lambda body: stubs.extract_stub(body),
        "detect": lambda body: stubs.detect_stub(index, body),
        "ground": lambda body: stubs.ground_stub(index, body),
        "inpaint": lambda body: stubs.inpaint_stub(body),
        "synonym": synonym_fn,
        "predict": lambda body: stubs.predict_stub(
            config.ve_mode, config.ve_seed, config.ve_p, body
        ),
    }

    def make_route(role: str):
        handler = handlers[role]

        async def route(request: Request):
            try:
                body = await request.json()
            except Exception:
                return JSONResponse(
                    {"error": {"message": "request body is not valid JSON", "role": role}},
                    status_code=400,
                )
            message = schemas.validate_request(role, body)
            if message is not None:
                return JSONResponse(
                    {"error": {"message": message, "role": role}}, status_code=400
                )
            try:
                return JSONResponse(handler(body))
            except StubError as e:
                return JSONResponse(
                    {"error": {"message": str(e), "role": role}}, status_code=e.status
                )

        return route

    for role in ROLES:
        if role in config.roles:
            app.add_api_route(f"/v1/{role}", make_route(role), methods=["POST"])

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "roles": sorted(config.roles)}

    return app


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="veraser-server", description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8008)
    parser.add_argument(
        "--roles", default=",".join(ROLES), help="comma-separated subset of the six roles"
    )
    parser.add_argument("--scene-dir", default=None, help="ground-truth corpus directory")
    parser.add_argument("--ve-mode", default="perfect", choices=VE_MODES)
    parser.add_argument("--ve-seed", type=int, default=0)
    parser.add_argument("--ve-p", type=float, default=0.25)
    parser.add_argument("--synonym-mode", default="identity", choices=SYNONYM_MODES)
    args = parser.parse_args(argv)
    try:
        config = ServerConfig(
            host=args.host,
            port=args.port,
            roles=tuple(r for r in args.roles.split(",") if r),
            scene_dir=Path(args.scene_dir) if args.scene_dir else None,
            ve_mode=args.ve_mode,
            ve_seed=args.ve_seed,
            ve_p=args.ve_p,
            synonym_mode=args.synonym_mode,
        )
    except ValueError as e:
        print(f"bad configuration: {e}", file=sys.stderr)
        return 2
    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())

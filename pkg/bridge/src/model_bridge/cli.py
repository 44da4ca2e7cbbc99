"""Bridge CLI: serve the configured backends."""

from __future__ import annotations

import click
import uvicorn

from .app import create_app
from .config import BridgeConfig, load_config


@click.group()
def main():
    """HTTP bridge for detection experts and a reasoner."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--host", default=None, help="Override the configured listen host.")
@click.option("--port", type=int, default=None, help="Override the configured listen port.")
def serve(config_path, host, port):
    """Start the bridge server."""
    try:
        config = load_config(config_path) if config_path else BridgeConfig()
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"cannot load config: {exc}")
    app = create_app(config)
    uvicorn.run(
        app,
        host=host or config.listen_host,
        port=port if port is not None else config.listen_port,
    )


if __name__ == "__main__":
    main(prog_name="model-bridge")

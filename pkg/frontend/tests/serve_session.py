"""Launches a real lockstep control-panel session on a free port for the
integration test. Prints "PORT <n>" once the port is chosen, then serves
until killed."""

import socket

import uvicorn

from tweakrl.config import TrainConfig
from tweakrl.trainer import Learner, collect_demos
from tweakrl.ui_server import UiBridge, create_app


def main() -> None:
    cfg = TrainConfig(demos_per_task=2, batch_size=12, embed_dim=16,
                      hidden=(16, 16), seed=7)
    buffers, talk_tweak, mc_returns = collect_demos(cfg)
    learner = Learner(cfg, buffers, talk_tweak, mc_returns)
    bridge = UiBridge(learner.snapshot(), cfg, session_seed=3)
    app = create_app(bridge)

    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    print(f"PORT {port}", flush=True)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


if __name__ == "__main__":
    main()

"""Reference wire-protocol backend: exact 1-D conjugate Gaussian posterior.

Demonstrates the line-delimited JSON protocol external approximators must
speak (hello/ready handshake, approximate/theta exchanges, bye).  Serves
the posterior N(y * w, v) of the model with prior N(0, prior_var) and
likelihood N(theta, like_var); with this backend the chain's latent draws
recover the prior.

Usage as a chain backend, e.g.:

    {"experiment": "stochvol-external", ...,
     "params": {"command": "python scripts/reference_backend.py"}}

works for any ``latent_dim == obs_dim == 1`` experiment; the stochastic
volatility model needs a real inference backend instead.
"""

import argparse
import json
import math
import sys

import numpy as np


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--prior-var", type=float, default=1.0)
    ap.add_argument("--like-var", type=float, default=1.0)
    args = ap.parse_args()

    hello = json.loads(sys.stdin.readline())
    if hello.get("type") != "hello":
        return 1
    if hello["latent_dim"] != 1 or hello["obs_dim"] != 1:
        # advertise the mismatch instead of silently mis-serving
        print(json.dumps({"type": "error", "reason": "1-D backend"}), flush=True)
        return 1
    print(json.dumps({"type": "ready", "version": hello["version"]}), flush=True)

    w = args.prior_var / (args.prior_var + args.like_var)
    v = args.prior_var * args.like_var / (args.prior_var + args.like_var)
    for line in sys.stdin:
        msg = json.loads(line)
        if msg.get("type") == "bye":
            return 0
        if msg.get("type") != "approximate":
            print(json.dumps({"type": "error", "reason": "bad message"}), flush=True)
            return 1
        rng = np.random.default_rng(msg["seed"])
        theta = w * msg["y"][0] + math.sqrt(v) * rng.standard_normal()
        print(json.dumps({"type": "theta", "value": [theta]}), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())

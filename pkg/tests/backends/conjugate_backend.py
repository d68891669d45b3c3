"""Test backend: exact 1-D conjugate Gaussian posterior sampler.

Prior N(0, 1), likelihood N(theta, 1): posterior N(y/2, 1/2).  Draws are
seeded from the request so replies are pure functions of the message.
"""
import json
import math
import sys

import numpy as np


def main():
    hello = json.loads(sys.stdin.readline())
    assert hello["latent_dim"] == 1 and hello["obs_dim"] == 1
    print(json.dumps({"type": "ready", "version": hello["version"]}), flush=True)
    for line in sys.stdin:
        msg = json.loads(line)
        if msg["type"] == "bye":
            return
        y = msg["y"][0]
        rng = np.random.default_rng(msg["seed"])
        theta = 0.5 * y + math.sqrt(0.5) * rng.standard_normal()
        print(json.dumps({"type": "theta", "value": [theta]}), flush=True)


if __name__ == "__main__":
    main()

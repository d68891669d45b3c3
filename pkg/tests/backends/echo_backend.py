"""Test backend: always replies with a fixed latent vector."""
import json
import sys


def main():
    fixed = float(sys.argv[1]) if len(sys.argv) > 1 else 3.25
    hello = json.loads(sys.stdin.readline())
    dim = hello["latent_dim"]
    print(json.dumps({"type": "ready", "version": hello["version"]}), flush=True)
    for line in sys.stdin:
        msg = json.loads(line)
        if msg["type"] == "bye":
            return
        print(json.dumps({"type": "theta", "value": [fixed] * dim}), flush=True)


if __name__ == "__main__":
    main()

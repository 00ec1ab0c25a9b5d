"""Minimal out-of-process simulator speaking the line-delimited JSON protocol.

Dynamics: an integrator x_next = x + tau * u on the first m state dimensions,
plus an optional constant bias and seeded uniform noise derived from SHA-256
of the seed, so equal seeds reproduce equal draws. Used as the test double
for the external backend.

Usage: python external_sim.py N M [--bias B] [--noise A] [--sleep S]
       [--fail-at K] [--garbage-at K]
"""

import argparse
import hashlib
import json
import sys
import time


def noise_draw(seed: int, n: int, amplitude: float):
    out = []
    for i in range(n):
        h = hashlib.sha256(f"{seed}:{i}".encode()).digest()
        u = int.from_bytes(h[:8], "little") / 2 ** 64
        out.append((2.0 * u - 1.0) * amplitude)
    return out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("n", type=int)
    parser.add_argument("m", type=int)
    parser.add_argument("--bias", type=float, default=0.0)
    parser.add_argument("--noise", type=float, default=0.0)
    parser.add_argument("--sleep", type=float, default=0.0)
    parser.add_argument("--fail-at", type=int, default=-1)
    parser.add_argument("--garbage-at", type=int, default=-1)
    args = parser.parse_args()

    steps = 0
    for line in sys.stdin:
        req = json.loads(line)
        if req.get("cmd") == "info":
            print(json.dumps({"n": args.n, "m": args.m}), flush=True)
            continue
        if req.get("cmd") != "step":
            print(json.dumps({"error": f"unknown command {req.get('cmd')}"}), flush=True)
            continue
        steps += 1
        if steps == args.fail_at:
            print(json.dumps({"error": "injected failure"}), flush=True)
            continue
        if steps == args.garbage_at:
            print("this is not json", flush=True)
            continue
        if args.sleep > 0:
            time.sleep(args.sleep)
        x = req["x"]
        u = req["u"]
        tau = req["tau"]
        seed = req["seed"]
        noise = noise_draw(seed, args.n, args.noise)
        x_next = [
            x[i] + (tau * u[i] if i < args.m else 0.0) + args.bias + noise[i]
            for i in range(args.n)
        ]
        print(json.dumps({"x_next": x_next}), flush=True)


if __name__ == "__main__":
    main()

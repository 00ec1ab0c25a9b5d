"""Nominal transition maps and stochastic simulators.

Two kinds of system live here. A :class:`NominalModel` is a known,
deterministic discrete-time map ``x+ = f(x, u)`` over a compact state box and
a finite input grid. A stochastic simulator produces one sampled next state
per call, ``x+ = fhat(x, u, w)``, where the disturbance ``w`` is never
observed directly; only next-state samples are.

The synthetic simulator family is constructed as ``fhat = f + b(x, u) +
noise`` with a zero-mean noise law, so the true mean gap ``|E fhat - f|``
equals ``|b(x, u)|`` exactly and downstream guarantees can be validated
against ground truth. External simulators are reached over a line-delimited
JSON protocol on a child process's standard streams.
"""

from __future__ import annotations

import json
import math
import os
import select
import subprocess
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, SimulatorIOError, UnsupportedOperationError
from .seeding import rng_for


@dataclass(frozen=True)
class SystemSpec:
    """Dimensions, sampling time, state box, and finite input grid.

    ``state_box`` has shape (n, 2) with rows (lower, upper); ``input_grid``
    has shape (M, m), one row per admissible input vector.
    """

    state_dim: int
    input_dim: int
    tau: float
    state_box: np.ndarray
    input_grid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "state_box", np.asarray(self.state_box, dtype=float))
        object.__setattr__(self, "input_grid", np.asarray(self.input_grid, dtype=float))
        if self.state_dim < 1 or self.input_dim < 1:
            raise InvalidArgumentError("state_dim and input_dim must be >= 1")
        if not self.tau > 0:
            raise InvalidArgumentError(f"tau must be positive, got {self.tau}")
        if self.state_box.shape != (self.state_dim, 2):
            raise InvalidArgumentError(
                f"state_box shape {self.state_box.shape} != ({self.state_dim}, 2)"
            )
        if np.any(self.state_box[:, 0] > self.state_box[:, 1]):
            raise InvalidArgumentError("state_box has an interval with lower > upper")
        grid = self.input_grid
        if grid.ndim == 1:
            grid = grid.reshape(-1, 1)
            object.__setattr__(self, "input_grid", grid)
        if grid.shape[0] == 0 or grid.shape[1] != self.input_dim:
            raise InvalidArgumentError(
                f"input_grid shape {grid.shape} incompatible with input_dim {self.input_dim}"
            )
        if len({tuple(row) for row in grid.tolist()}) != grid.shape[0]:
            raise InvalidArgumentError("input_grid contains duplicate inputs")
        if not np.all(np.isfinite(self.state_box)) or not np.all(np.isfinite(grid)):
            raise InvalidArgumentError("state_box and input_grid must be finite")

    @property
    def n_inputs(self) -> int:
        return self.input_grid.shape[0]

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.state_box[:, 0]) and np.all(x <= self.state_box[:, 1]))


@dataclass(frozen=True)
class NominalModel:
    """Known deterministic transition map over a :class:`SystemSpec`.

    The wrapped map is vectorized: it accepts ``x`` of shape (..., n) and a
    single input ``u`` of shape (m,), returning (..., n). Evaluation is pure
    and bit-reproducible.
    """

    spec: SystemSpec
    kind: str
    _map: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)

    def map_batch(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Evaluate f at a batch of states (no validation, internal use)."""
        return self._map(np.asarray(x, dtype=float), np.asarray(u, dtype=float))


def _check_point(x, n, name):
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise InvalidArgumentError(f"{name} has shape {x.shape}, expected ({n},)")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} contains non-finite components: {x}")
    return x


def step_nominal(model: NominalModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One step of the nominal map at a single (x, u)."""
    x = _check_point(x, model.spec.state_dim, "x")
    u = _check_point(u, model.spec.input_dim, "u")
    return model.map_batch(x, u)


def turtlebot(spec: SystemSpec) -> NominalModel:
    """Unicycle update: positions advance by tau*v along the heading,
    heading advances by tau*omega."""
    tau = spec.tau

    def f(x, u):
        out = np.array(x, dtype=float, copy=True)
        out[..., 0] = x[..., 0] + tau * u[0] * np.cos(x[..., 2])
        out[..., 1] = x[..., 1] + tau * u[0] * np.sin(x[..., 2])
        out[..., 2] = x[..., 2] + tau * u[1]
        return out

    if spec.state_dim != 3 or spec.input_dim != 2:
        raise InvalidArgumentError("turtlebot requires n=3, m=2")
    return NominalModel(spec=spec, kind="turtlebot", _map=f)


def pendulum(spec: SystemSpec, mass: float = 1.0, length: float = 1.0,
             gravity: float = 9.81) -> NominalModel:
    """Torque-driven pendulum: angle integrates velocity, velocity picks up
    a gravity term -(3 g tau / 2 l) sin(x1) and a torque term 3 tau u / (m l^2)."""
    tau = spec.tau
    g_coef = 3.0 * gravity * tau / (2.0 * length)
    u_coef = 3.0 * tau / (mass * length ** 2)

    def f(x, u):
        out = np.array(x, dtype=float, copy=True)
        out[..., 0] = x[..., 0] + tau * x[..., 1]
        out[..., 1] = x[..., 1] - g_coef * np.sin(x[..., 0]) + u_coef * u[0]
        return out

    if spec.state_dim != 2 or spec.input_dim != 1:
        raise InvalidArgumentError("pendulum requires n=2, m=1")
    return NominalModel(spec=spec, kind="pendulum", _map=f)


def affine(spec: SystemSpec, a_matrix, b_matrix, offset=None) -> NominalModel:
    """Affine test map x+ = A x + B u + c."""
    a = np.asarray(a_matrix, dtype=float)
    b = np.asarray(b_matrix, dtype=float)
    c = np.zeros(spec.state_dim) if offset is None else np.asarray(offset, dtype=float)
    n, m = spec.state_dim, spec.input_dim
    if a.shape != (n, n) or b.shape != (n, m) or c.shape != (n,):
        raise InvalidArgumentError("affine matrices have inconsistent shapes")

    def f(x, u):
        return x @ a.T + u @ b.T + c

    return NominalModel(spec=spec, kind="affine-test", _map=f)


def composed(spec: SystemSpec, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> NominalModel:
    """Wrap a user-supplied vectorized map as a nominal model."""
    return NominalModel(spec=spec, kind="user-defined-composition", _map=fn)


_MODEL_BUILDERS = {
    "turtlebot": turtlebot,
    "pendulum": pendulum,
    "affine-test": affine,
}


# ---------------------------------------------------------------------------
# Bias library and noise laws for the synthetic simulator family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BiasSpec:
    """Mean-gap function b(x, u) for synthetic simulators.

    kinds:
      zero        b = 0
      constant    b = offset
      linear      b = state_matrix @ x + input_matrix @ u + offset
      sinusoidal  b = amplitude * sin(frequency @ x + phase)
    """

    kind: str = "zero"
    offset: Optional[np.ndarray] = None
    state_matrix: Optional[np.ndarray] = None
    input_matrix: Optional[np.ndarray] = None
    amplitude: Optional[np.ndarray] = None
    frequency: Optional[np.ndarray] = None
    phase: Optional[np.ndarray] = None

    def __call__(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.kind == "zero":
            return np.zeros(x.shape)
        if self.kind == "constant":
            return np.broadcast_to(np.asarray(self.offset, dtype=float), x.shape).copy()
        if self.kind == "linear":
            n = x.shape[-1]
            out = np.zeros(x.shape)
            if self.state_matrix is not None:
                out = out + x @ np.asarray(self.state_matrix, dtype=float).T
            if self.input_matrix is not None:
                out = out + u @ np.asarray(self.input_matrix, dtype=float).T
            if self.offset is not None:
                out = out + np.asarray(self.offset, dtype=float)
            return out
        if self.kind == "sinusoidal":
            amp = np.asarray(self.amplitude, dtype=float)
            freq = np.asarray(self.frequency, dtype=float)
            phase = np.zeros(amp.shape) if self.phase is None else np.asarray(self.phase, dtype=float)
            return amp * np.sin(x @ freq.T + phase)
        raise InvalidArgumentError(f"unknown bias kind {self.kind!r}")

    def lipschitz_in_state(self, n: int) -> np.ndarray:
        """Per-dimension Lipschitz constant of b in x (exact, from the closed form)."""
        if self.kind in ("zero", "constant"):
            return np.zeros(n)
        if self.kind == "linear":
            if self.state_matrix is None:
                return np.zeros(n)
            return np.linalg.norm(np.asarray(self.state_matrix, dtype=float), axis=1)
        if self.kind == "sinusoidal":
            amp = np.abs(np.asarray(self.amplitude, dtype=float))
            freq = np.asarray(self.frequency, dtype=float)
            return amp * np.linalg.norm(freq, axis=1)
        raise InvalidArgumentError(f"unknown bias kind {self.kind!r}")


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean noise law, one scale per state dimension.

    laws:
      none                degenerate (always zero)
      gaussian            sigma * N(0, 1)
      uniform             uniform on [-sigma, sigma]
      truncated-gaussian  sigma * standard normal conditioned on |z| <= clip
    """

    law: str = "none"
    sigma: Optional[np.ndarray] = None
    clip: float = 3.0

    def __post_init__(self):
        if self.law not in ("none", "gaussian", "uniform", "truncated-gaussian"):
            raise InvalidArgumentError(f"unknown noise law {self.law!r}")
        if self.law != "none":
            object.__setattr__(self, "sigma", np.atleast_1d(np.asarray(self.sigma, dtype=float)))
            if np.any(self.sigma < 0):
                raise InvalidArgumentError("noise sigma must be non-negative")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.law == "none":
            return np.zeros(n)
        sigma = np.broadcast_to(self.sigma, (n,))
        if self.law == "gaussian":
            return rng.standard_normal(n) * sigma
        if self.law == "uniform":
            return (2.0 * rng.random(n) - 1.0) * sigma
        # truncated-gaussian via inverse CDF, deterministic in the uniform draw
        from scipy.stats import truncnorm

        return truncnorm.ppf(rng.random(n), -self.clip, self.clip) * sigma


class StochasticSimulator:
    """Interface shared by synthetic and external simulator backends."""

    spec: SystemSpec
    supports_common_random_numbers: bool = False

    def step(self, x: np.ndarray, u: np.ndarray, seed: int) -> np.ndarray:
        raise NotImplementedError

    def replicates(self, x: np.ndarray, u: np.ndarray, seeds: Sequence[int]) -> np.ndarray:
        """Stacked samples of fhat(x, u, w) for the given seeds, shape (len(seeds), n)."""
        return np.stack([self.step(x, u, s) for s in seeds])

    def clone(self) -> "StochasticSimulator":
        """Independent instance safe to hand to another worker."""
        return self

    def close(self):
        pass


class SyntheticSimulator(StochasticSimulator):
    """fhat = f + b(x, u) + noise, with seedable zero-mean noise.

    The same seed always indexes the same underlying noise draw regardless of
    (x, u), which realizes common random numbers across states.
    """

    def __init__(self, base: NominalModel, bias: BiasSpec = BiasSpec(),
                 noise: NoiseSpec = NoiseSpec()):
        self.base = base
        self.spec = base.spec
        self.bias = bias
        self.noise = noise
        self.supports_common_random_numbers = True

    def step(self, x, u, seed):
        x = _check_point(x, self.spec.state_dim, "x")
        u = _check_point(u, self.spec.input_dim, "u")
        mean = self.base.map_batch(x, u) + self.bias(x, u)
        return mean + self.noise.draw(np.random.default_rng(int(seed)), self.spec.state_dim)

    def replicates(self, x, u, seeds):
        x = _check_point(x, self.spec.state_dim, "x")
        u = _check_point(u, self.spec.input_dim, "u")
        mean = self.base.map_batch(x, u) + self.bias(x, u)
        n = self.spec.state_dim
        noise = np.empty((len(seeds), n))
        for i, s in enumerate(seeds):
            noise[i] = self.noise.draw(np.random.default_rng(int(s)), n)
        return mean + noise

    def true_mean_gap(self, x, u):
        x = _check_point(x, self.spec.state_dim, "x")
        u = _check_point(u, self.spec.input_dim, "u")
        return np.abs(self.bias(x, u))


def true_mean_gap(sim: StochasticSimulator, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Exact |E fhat(x,u,w) - f(x,u)|, available for synthetic backends only."""
    if not isinstance(sim, SyntheticSimulator):
        raise UnsupportedOperationError(
            "true_mean_gap requires a synthetic backend with a known bias function"
        )
    return sim.true_mean_gap(x, u)


def step_simulator(sim: StochasticSimulator, x: np.ndarray, u: np.ndarray, seed: int) -> np.ndarray:
    """One sampled next state from the simulator under the given seed."""
    return sim.step(x, u, seed)


# ---------------------------------------------------------------------------
# External simulator protocol (line-delimited JSON over child stdio)
# ---------------------------------------------------------------------------

class ExternalSimulator(StochasticSimulator):
    """Adapter for an out-of-process simulator.

    Protocol, one request per line on the child's stdin, one response per
    line on its stdout:

        {"cmd": "info"}                                   -> {"n": .., "m": ..}
        {"cmd": "step", "x": [..], "u": [..],
         "tau": .., "seed": ..}                           -> {"x_next": [..]}

    Any response carrying an "error" key aborts the current batch with a
    :class:`SimulatorIOError`. Per-step timeout defaults to 5 seconds.
    """

    def __init__(self, spec: SystemSpec, command: Sequence[str], timeout: float = 5.0,
                 supports_common_random_numbers: bool = False):
        self.spec = spec
        self.command = list(command)
        self.timeout = float(timeout)
        self.supports_common_random_numbers = supports_common_random_numbers
        self._proc: Optional[subprocess.Popen] = None
        self._buf = b""

    def _ensure_started(self):
        if self._proc is not None and self._proc.poll() is None:
            return
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            bufsize=0,
        )
        self._buf = b""
        info = self._request({"cmd": "info"})
        n, m = info.get("n"), info.get("m")
        if (n, m) != (self.spec.state_dim, self.spec.input_dim):
            raise SimulatorIOError(
                f"external simulator reports dimensions ({n}, {m}), "
                f"expected ({self.spec.state_dim}, {self.spec.input_dim})",
                payload=info,
            )

    def _read_line(self) -> bytes:
        import time

        end = time.monotonic() + self.timeout
        while b"\n" not in self._buf:
            remaining = end - time.monotonic()
            if remaining <= 0:
                raise SimulatorIOError(
                    f"external simulator timed out after {self.timeout} s",
                    payload=self._buf.decode("utf-8", "replace"),
                )
            fd = self._proc.stdout.fileno()
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                raise SimulatorIOError(
                    "external simulator closed its output stream",
                    payload=self._buf.decode("utf-8", "replace"),
                )
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def _request(self, obj: dict) -> dict:
        try:
            self._proc.stdin.write((json.dumps(obj, separators=(",", ":")) + "\n").encode())
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SimulatorIOError(f"failed to write to external simulator: {exc}") from exc
        line = self._read_line()
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SimulatorIOError(
                "external simulator produced a malformed response",
                payload=line.decode("utf-8", "replace"),
            ) from exc
        if isinstance(resp, dict) and "error" in resp:
            raise SimulatorIOError(
                f"external simulator reported an error: {resp['error']}", payload=resp
            )
        return resp

    def step(self, x, u, seed):
        x = _check_point(x, self.spec.state_dim, "x")
        u = _check_point(u, self.spec.input_dim, "u")
        self._ensure_started()
        resp = self._request(
            {"cmd": "step", "x": x.tolist(), "u": u.tolist(),
             "tau": self.spec.tau, "seed": int(seed)}
        )
        x_next = resp.get("x_next")
        if x_next is None or len(x_next) != self.spec.state_dim:
            raise SimulatorIOError("step response missing a valid x_next", payload=resp)
        out = np.asarray(x_next, dtype=float)
        if not np.all(np.isfinite(out)):
            raise SimulatorIOError("step response contains non-finite values", payload=resp)
        return out

    def clone(self):
        return ExternalSimulator(
            self.spec, self.command, timeout=self.timeout,
            supports_common_random_numbers=self.supports_common_random_numbers,
        )

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
            self._proc = None

    def __enter__(self):
        self._ensure_started()
        return self

    def __exit__(self, *exc):
        self.close()

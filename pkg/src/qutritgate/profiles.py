"""Device profiles: the bundled reference device (profile name ``paper``) and the INI-style profile file format.

Profile files use flat ``[section]`` / ``key = value`` syntax with
laboratory units (GHz, MHz, kHz) that are converted to rad/s and 1/s on
load::

    [levels]
    freqs_ghz = 0.0, 1.146, 6.839

    [couplings]
    scale_mhz = 100.0
    01 = 1.0
    12 = 1.5

    [decoherence]
    shape = gaussian
    gamma_khz_10 = 16.2
    dephasing_khz_01 = 204.1

    [readout]
    levels_v = 1.0, -1.0, 0.3
    noise_v = 0.0

    [thermal]
    p0 = 0.74

``freqs_ghz`` are level frequencies (ordinary, not angular). A coupling
``jk = r`` gives ``g_jk = 2 pi * scale_mhz * 1e6 * r`` rad/s per unit
drive amplitude. ``gamma_khz_ij`` is the rate from level i to level j.
"""

from __future__ import annotations

import configparser
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .core import CoherenceShape, DecoherenceRates, DeviceSpec, ReadoutModel

TWO_PI = 2.0 * math.pi
GHZ = TWO_PI * 1e9
MHZ = TWO_PI * 1e6
KHZ = 1e3

ALLOWED = {
    "levels": {"freqs_ghz"},
    "couplings": {"scale_mhz"},
    "decoherence": {"shape"},
    "readout": {"levels_v", "noise_v"},
    "thermal": {"p0"},
}


class ProfileError(ValueError):
    """A device profile file could not be parsed into a valid device."""


def _floats(text: str):
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ProfileError(f"bad number list {text!r}") from exc


def _pair(key: str, prefix: str):
    digits = key[len(prefix):]
    if len(digits) != 2 or not digits.isdigit():
        raise ProfileError(f"unknown key {key!r}")
    return int(digits[0]), int(digits[1])


def parse_profile(text: str) -> DeviceSpec:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ProfileError(str(exc)) from exc
    unknown = set(cp.sections()) - set(ALLOWED)
    if unknown:
        raise ProfileError(f"unknown sections: {sorted(unknown)}")
    if "levels" not in cp:
        raise ProfileError("missing [levels] section")
    sec = cp["levels"]
    for key in sec:
        if key not in ALLOWED["levels"]:
            raise ProfileError(f"unknown key {key!r} in [levels]")
    freqs = np.array(_floats(sec["freqs_ghz"])) * GHZ
    n = freqs.size

    g = np.zeros((n, n))
    if "couplings" in cp:
        sec = cp["couplings"]
        scale = float(sec.get("scale_mhz", "1.0")) * MHZ
        for key, val in sec.items():
            if key == "scale_mhz":
                continue
            j, k = _pair(key, "")
            if not (0 <= j < n and 0 <= k < n) or j == k:
                raise ProfileError(f"coupling {key!r} out of range")
            g[j, k] = g[k, j] = float(val) * scale

    gamma = np.zeros((3, 3))
    deph = np.zeros((3, 3))
    shape = CoherenceShape.GAUSSIAN
    if "decoherence" in cp:
        for key, val in cp["decoherence"].items():
            if key == "shape":
                try:
                    shape = CoherenceShape(val.strip().lower())
                except ValueError as exc:
                    raise ProfileError(f"unknown coherence shape {val!r}") from exc
            elif key.startswith("gamma_khz_"):
                i, j = _pair(key, "gamma_khz_")
                gamma[i, j] = float(val) * KHZ
            elif key.startswith("dephasing_khz_"):
                i, j = _pair(key, "dephasing_khz_")
                deph[i, j] = deph[j, i] = float(val) * KHZ
            else:
                raise ProfileError(f"unknown key {key!r} in [decoherence]")

    readout = ReadoutModel()
    if "readout" in cp:
        sec = cp["readout"]
        for key in sec:
            if key not in ALLOWED["readout"]:
                raise ProfileError(f"unknown key {key!r} in [readout]")
        levels = tuple(_floats(sec.get("levels_v", "1.0, -1.0, 0.3")))
        readout = ReadoutModel(levels, float(sec.get("noise_v", "0.0")))

    p0 = 0.74
    if "thermal" in cp:
        sec = cp["thermal"]
        for key in sec:
            if key not in ALLOWED["thermal"]:
                raise ProfileError(f"unknown key {key!r} in [thermal]")
        p0 = float(sec.get("p0", "0.74"))

    try:
        return DeviceSpec(freqs, g, DecoherenceRates(gamma, deph, shape), readout, p0)
    except ValueError as exc:
        raise ProfileError(str(exc)) from exc


def load_profile(path) -> DeviceSpec:
    if str(path) == "paper":
        return paper_device()
    return parse_profile(Path(path).read_text())


def paper_profile_text() -> str:
    return resources.files("qutritgate").joinpath("data/paper.device").read_text()


def paper_device(decoherence: bool = True) -> DeviceSpec:
    """Three-level model of the measured device.

    Level frequencies and decoherence rates are the measured values;
    coupling magnitudes are a model choice (only the 1-2 > 0-1 ordering is
    known, and 0-2 is parity-forbidden at the symmetry point).
    """
    dev = parse_profile(paper_profile_text())
    if not decoherence:
        dev = dev.replace(decoherence=DecoherenceRates.none())
    return dev

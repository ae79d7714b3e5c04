"""
Scenario file parser

Flat sectioned key-value text:

    [scenario]
    name = lab_run
    dt = 0.001
    [geometry]
    vector = 0 0 1
    point = 1 0 0
    [gains]
    k = 2 2

Sections left out keep the values of the built-in case1 scenario.
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from estimators.bias_observer import AntiWindupConfig, BiasLaw, BiasState, ConfigurationError
from geometry.liealg import Pose, exp_so3
from simulation.simulator import (
    REFERENCE_GAIN,
    FeatureKind,
    ReferenceFeature,
    Scenario,
    SinusoidProfile,
    TrajectoryProfile,
    builtin_scenarios,
)

logger = logging.getLogger(__name__)

SECTION_KEYS = {
    "scenario": {"name", "dt", "duration", "seed", "bias_law"},
    "geometry": {"point", "vector"},
    "gains": {"k", "k_b"},
    "antiwindup": {"kappa_omega", "kappa_v", "delta_omega", "delta_v"},
    "bias": {"omega", "v"},
    "trajectory": {
        "omega_amplitude",
        "omega_frequency",
        "omega_phase",
        "v_amplitude",
        "v_frequency",
        "v_phase",
    },
    "initial": {
        "true_rotation",
        "true_position",
        "estimate_rotation",
        "estimate_position",
        "bias_omega",
        "bias_v",
    },
    "noise": {"omega_std", "v_std"},
}

# Keys that may appear more than once in their section
REPEATABLE_KEYS = {("geometry", "point"), ("geometry", "vector")}

Entry = Tuple[str, str, int]  # key, raw value, line number


class ScenarioError(ValueError):
    """Raised when scenario or geometry text cannot be parsed."""


def _tokenize(text: str, source: str) -> Dict[str, List[Entry]]:
    sections: Dict[str, List[Entry]] = {}
    current: Optional[str] = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue

        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioError(f"{source}:{lineno}: malformed section header '{line}'")
            current = line[1:-1].strip().lower()
            if current not in SECTION_KEYS:
                raise ScenarioError(f"{source}:{lineno}: unknown section [{current}]")
            if current in sections:
                raise ScenarioError(f"{source}:{lineno}: section [{current}] appears twice")
            sections[current] = []
            continue

        if current is None:
            raise ScenarioError(f"{source}:{lineno}: key outside of any section")
        if "=" not in line:
            raise ScenarioError(f"{source}:{lineno}: expected 'key = value', got '{line}'")

        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if key not in SECTION_KEYS[current]:
            raise ScenarioError(f"{source}:{lineno}: unknown key '{key}' in [{current}]")
        if (current, key) not in REPEATABLE_KEYS and any(k == key for k, _, _ in sections[current]):
            raise ScenarioError(f"{source}:{lineno}: duplicate key '{key}' in [{current}]")
        sections[current].append((key, value, lineno))

    return sections


def _numbers(entry: Entry, source: str, count: Optional[int] = None) -> List[float]:
    key, value, lineno = entry
    try:
        numbers = [float(token) for token in value.replace(",", " ").split()]
    except ValueError:
        raise ScenarioError(f"{source}:{lineno}: '{key}' expects numbers, got '{value}'")
    if not numbers or not all(math.isfinite(x) for x in numbers):
        raise ScenarioError(f"{source}:{lineno}: '{key}' expects finite numbers, got '{value}'")
    if count is not None and len(numbers) != count:
        raise ScenarioError(f"{source}:{lineno}: '{key}' expects {count} numbers, got {len(numbers)}")
    return numbers


def _scalar(entry: Entry, source: str) -> float:
    return _numbers(entry, source, 1)[0]


def _triple(entry: Entry, source: str) -> Tuple[float, float, float]:
    x, y, z = _numbers(entry, source, 3)
    return x, y, z


def _lookup(entries: List[Entry]) -> Dict[str, Entry]:
    return {entry[0]: entry for entry in entries}


def _parse_geometry(sections: Dict[str, List[Entry]], source: str) -> Tuple[ReferenceFeature, ...]:
    features = []
    for entry in sections["geometry"]:
        coords = _triple(entry, source)
        kind = FeatureKind(entry[0])
        if kind is FeatureKind.VECTOR and not any(coords):
            raise ScenarioError(f"{source}:{entry[2]}: vector must be nonzero")
        features.append(ReferenceFeature(kind, coords))
    if not features:
        raise ScenarioError(f"{source}: [geometry] has no point or vector entries")
    return tuple(features)


def _parse_sinusoid(
    values: Dict[str, Entry], prefix: str, default: SinusoidProfile, source: str
) -> SinusoidProfile:
    def pick(field_name: str, fallback):
        entry = values.get(f"{prefix}_{field_name}")
        return _triple(entry, source) if entry else fallback

    return SinusoidProfile(
        amplitude=pick("amplitude", default.amplitude),
        frequency=pick("frequency", default.frequency),
        phase=pick("phase", default.phase),
    )


def _build_scenario(sections: Dict[str, List[Entry]], source: str, base: Scenario) -> Scenario:
    changes = {}

    scenario = _lookup(sections.get("scenario", []))
    if "name" in scenario:
        changes["name"] = scenario["name"][1]
    else:
        changes["name"] = Path(source).stem if source != "<text>" else "custom"
    if "dt" in scenario:
        changes["dt"] = _scalar(scenario["dt"], source)
    if "duration" in scenario:
        changes["duration"] = _scalar(scenario["duration"], source)
    if "seed" in scenario:
        seed = _scalar(scenario["seed"], source)
        if seed != int(seed) or seed < 0:
            raise ScenarioError(f"{source}:{scenario['seed'][2]}: seed must be a non-negative integer")
        changes["rng_seed"] = int(seed)
    if "bias_law" in scenario:
        _, value, lineno = scenario["bias_law"]
        try:
            changes["bias_law"] = BiasLaw(value.lower())
        except ValueError:
            choices = ", ".join(law.value for law in BiasLaw)
            raise ScenarioError(f"{source}:{lineno}: bias_law must be one of {choices}, got '{value}'")

    geometry = base.reference_geometry
    if "geometry" in sections:
        geometry = _parse_geometry(sections, source)
        changes["reference_geometry"] = geometry

    gains = _lookup(sections.get("gains", []))
    if "k" in gains:
        k = _numbers(gains["k"], source)
        if len(k) == 1:
            k = k * len(geometry)
        if len(k) != len(geometry):
            raise ScenarioError(
                f"{source}:{gains['k'][2]}: {len(k)} gains for {len(geometry)} references"
            )
        if any(not value > 0.0 for value in k):
            raise ScenarioError(f"{source}:{gains['k'][2]}: gains must be positive, got {k}")
        changes["gains"] = tuple(k)
    elif "geometry" in sections:
        changes["gains"] = (REFERENCE_GAIN,) * len(geometry)

    antiwindup = _lookup(sections.get("antiwindup", []))
    if antiwindup or "k_b" in gains:
        base_cfg = base.antiwindup
        try:
            changes["antiwindup"] = AntiWindupConfig(
                k_b=_scalar(gains["k_b"], source) if "k_b" in gains else base_cfg.k_b,
                kappa_angular=_scalar(antiwindup["kappa_omega"], source)
                if "kappa_omega" in antiwindup
                else base_cfg.kappa_angular,
                kappa_linear=_scalar(antiwindup["kappa_v"], source)
                if "kappa_v" in antiwindup
                else base_cfg.kappa_linear,
                delta_angular=_scalar(antiwindup["delta_omega"], source)
                if "delta_omega" in antiwindup
                else base_cfg.delta_angular,
                delta_linear=_scalar(antiwindup["delta_v"], source)
                if "delta_v" in antiwindup
                else base_cfg.delta_linear,
            )
        except ConfigurationError as e:
            raise ScenarioError(f"{source}: {e}")

    bias = _lookup(sections.get("bias", []))
    if bias:
        changes["true_bias"] = BiasState(
            _triple(bias["omega"], source) if "omega" in bias else base.true_bias.angular,
            _triple(bias["v"], source) if "v" in bias else base.true_bias.linear,
        )

    trajectory = _lookup(sections.get("trajectory", []))
    if trajectory:
        changes["trajectory"] = TrajectoryProfile(
            angular=_parse_sinusoid(trajectory, "omega", base.trajectory.angular, source),
            linear=_parse_sinusoid(trajectory, "v", base.trajectory.linear, source),
        )

    initial = _lookup(sections.get("initial", []))
    if initial:
        changes.update(_parse_initial(initial, base, source))

    noise = _lookup(sections.get("noise", []))
    if noise:
        omega_std = _scalar(noise["omega_std"], source) if "omega_std" in noise else 0.0
        v_std = _scalar(noise["v_std"], source) if "v_std" in noise else 0.0
        if omega_std < 0.0 or v_std < 0.0:
            raise ScenarioError(f"{source}: noise standard deviations must be >= 0")
        changes["noise_std"] = (omega_std, v_std)

    return base.replace(**changes)


def _parse_initial(initial: Dict[str, Entry], base: Scenario, source: str) -> dict:
    changes = {}

    def pose(rotation_key: str, position_key: str, fallback: Pose) -> Optional[Pose]:
        if rotation_key not in initial and position_key not in initial:
            return None
        rotation = (
            exp_so3(_triple(initial[rotation_key], source))
            if rotation_key in initial
            else fallback.rotation
        )
        position = (
            _triple(initial[position_key], source) if position_key in initial else fallback.position
        )
        return Pose(rotation, position)

    true_pose = pose("true_rotation", "true_position", base.initial_true_pose)
    if true_pose is not None:
        changes["initial_true_pose"] = true_pose
    estimate = pose("estimate_rotation", "estimate_position", base.initial_estimate)
    if estimate is not None:
        changes["initial_estimate"] = estimate
    if "bias_omega" in initial or "bias_v" in initial:
        b0 = base.initial_bias_estimate
        changes["initial_bias_estimate"] = BiasState(
            _triple(initial["bias_omega"], source) if "bias_omega" in initial else b0.angular,
            _triple(initial["bias_v"], source) if "bias_v" in initial else b0.linear,
        )
    return changes


def parse_scenario_text(
    text: str, source: str = "<text>", require_geometry: bool = False
) -> Scenario:
    """
    Parse scenario text on top of the case1 defaults

    Args:
        text: Scenario file contents
        source: Name used in error messages
        require_geometry: Fail when the text has no [geometry] section

    Returns:
        The parsed Scenario
    """
    sections = _tokenize(text, source)
    if require_geometry and "geometry" not in sections:
        raise ScenarioError(f"{source}: no [geometry] section")
    scenario = _build_scenario(sections, source, builtin_scenarios()["case1"])
    logger.debug(f"Parsed scenario '{scenario.name}' from {source}")
    return scenario


def parse_scenario_file(path: str) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ScenarioError(f"Cannot read scenario file {path}: {e}")
    return parse_scenario_text(text, source=path)


def parse_geometry_file(path: str) -> Tuple[Tuple[ReferenceFeature, ...], Tuple[float, ...]]:
    """Reference geometry and gains of a file that must contain a [geometry] section."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ScenarioError(f"Cannot read geometry file {path}: {e}")
    scenario = parse_scenario_text(text, source=path, require_geometry=True)
    return scenario.reference_geometry, scenario.gains


def load_scenario(source: str) -> Scenario:
    """Built-in name (case1|case2|case3) or scenario file path."""
    builtins = builtin_scenarios()
    if source in builtins:
        return builtins[source]
    if not Path(source).is_file():
        raise ScenarioError(
            f"'{source}' is neither a built-in scenario ({', '.join(builtins)}) nor a file"
        )
    return parse_scenario_file(source)

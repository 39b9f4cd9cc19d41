"""
Named scenario presets.

A preset is a set of section overrides applied before the keys of a
configuration file, so ``[scenario] preset = "latvia"`` followed by explicit
keys gives the preset with local changes.
"""

from typing import Any, Dict, List


PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    # Register overcounts the resident population by about 7%; a logistic
    # erroneous-enumeration model fitted at the census is rolled forward.
    "latvia": {
        "scenario": {
            "name": "latvia-like",
            "erroneous_rate": 0.0654,
            "missing_rate": 0.0,
            "displacement_rate": 0.03,
            "mean_sol_multiplicity": 1.4,
            "n_sources": 6,
        },
        "initiation": {"theta_method": "subset"},
        "tree": {"target": "erroneous"},
    },
    # Residency index driven by a composite sign-of-life score over 27 sources.
    "estonia": {
        "scenario": {
            "name": "estonia-like",
            "erroneous_rate": 0.05,
            "missing_rate": 0.0,
            "displacement_rate": 0.02,
            "n_sources": 27,
            "sol_in_scope_prob": 0.6,
            "sol_erroneous_prob": 0.15,
        },
        "rolling": {
            "residency_decay": 0.7,
            "residency_gain": 0.3,
            "residency_threshold": 0.5,
            "residency_initial": 0.5,
        },
    },
    # Clean world for unbiasedness checks.
    "unbiased": {
        "scenario": {
            "name": "unbiased",
            "erroneous_rate": 0.0,
            "missing_rate": 0.0,
            "displacement_rate": 0.0,
            "census_noise_cv": 0.0,
        },
        "dynamics": {
            "move_rate": 0.0,
            "birth_rate": 0.0,
            "death_rate": 0.0,
            "immigration_rate": 0.0,
            "emigration_rate": 0.0,
            "beta_drift_sd": 0.0,
        },
    },
    # Two addresses per record with a weak signal, where the classifier
    # is visibly biased towards the majority address.
    "classifier-bias": {
        "scenario": {
            "name": "classifier-bias",
            "mean_sol_multiplicity": 2.0,
            "max_sol_multiplicity": 2,
            "same_locality_prob": 0.0,
            "placement_coefficients": [0.4, 0.2, 0.4],
        },
    },
}


def available_presets() -> List[str]:
    """List preset names."""
    return sorted(PRESETS)


def preset_overrides(name: str) -> Dict[str, Dict[str, Any]]:
    """
    Get the section overrides of a preset.

    Accepts both ``latvia`` and ``latvia-like``.

    Raises:
        KeyError: If the preset is unknown
    """
    key = name[:-5] if name.endswith("-like") else name
    if key not in PRESETS:
        raise KeyError(f"Unknown preset '{name}'. Available: {available_presets()}")
    return {section: dict(values) for section, values in PRESETS[key].items()}

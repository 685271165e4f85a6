from typing import Dict, List, Optional
from dataclasses import dataclass, field

# Conditional imports for different execution contexts
try:
    from ..schema import ExperimentConfig
except ImportError:
    from schema import ExperimentConfig


@dataclass
class ExperimentProfile:
    """Named experiment preset"""
    name: str
    description: str
    overrides: Dict[str, object] = field(default_factory=dict)


class ProfileManager:
    """
    Serves the named presets the CLI accepts through ``--profile``
    """

    def __init__(self):
        self.profiles = self._initialize_profiles()

    def _initialize_profiles(self) -> Dict[str, ExperimentProfile]:
        """Initialize supported profiles"""
        profiles = {}

        profile_configs = [
            {
                "name": "desk",
                "description": "Desk-scale steering: d=3, 3.6e3 cycles per candidate, 300 epochs",
                "overrides": {},
            },
            {
                "name": "full",
                "description": "Full budget: 3.6e4 cycles per candidate, 1000 epochs (1.8e9 training cycles)",
                "overrides": {
                    "cycles_per_candidate": 36_000,
                    "epochs": 1000,
                    "evaluation.shots": 200_000,
                },
            },
            {
                "name": "smoke",
                "description": "Seconds-long run for tests and wiring checks",
                "overrides": {
                    "cycles": 2,
                    "cycles_per_candidate": 128,
                    "epochs": 3,
                    "agent.batch": 4,
                    "evaluation.every": 1,
                    "evaluation.shots": 256,
                    "calibration.shots": 256,
                    "calibration.draws": 1,
                    "scaling.distances": [3],
                    "scaling.params_per_site": [1],
                    "scaling.reference_shots": 512,
                    "scaling.transient_epochs": 0,
                    "gradcheck.directions": 2,
                    "gradcheck.shots": 2048,
                    "gradcheck.min_logical_errors": 1,
                },
            },
        ]

        for config in profile_configs:
            profiles[config["name"]] = ExperimentProfile(
                name=config["name"],
                description=config["description"],
                overrides=config["overrides"],
            )

        return profiles

    def get_supported_profiles(self) -> List[str]:
        """Get list of profile names"""
        return list(self.profiles.keys())

    def get_profile_info(self, name: str) -> Optional[ExperimentProfile]:
        """Get profile information for a specific name"""
        return self.profiles.get(name)

    def is_profile_supported(self, name: str) -> bool:
        return name in self.profiles

    def get_config(self, name: str, base: Optional[ExperimentConfig] = None) -> Optional[ExperimentConfig]:
        """Base config (defaults when omitted) with the profile's overrides applied"""
        profile = self.get_profile_info(name)
        if not profile:
            return None
        base = base or ExperimentConfig()
        return base.with_overrides(**profile.overrides)


# Global instance
profile_manager = ProfileManager()

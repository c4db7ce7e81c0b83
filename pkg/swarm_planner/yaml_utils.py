import logging
from typing import Any, Dict, Optional

import yaml

from swarm_planner.exceptions import ConfigurationError

PROFILE_PREFIX = "profile-"
DEFAULT_SECTION = "default-settings"


def read_config(filepath: str, profile: Optional[str] = None) -> Dict[str, Any]:
    """
    Reads a YAML (or JSON) configuration file and returns one settings mapping.

    A file is either a flat mapping of settings or a set of named profiles
    (`profile-<name>` keys) that usually merge a `default-settings` anchor.
    Without a profile the `default-settings` section is used when present,
    otherwise the whole file.

    Args:
        filepath (str): The path to the configuration file to be read.
        profile (Optional[str]): Profile name, without the `profile-` prefix.

    Returns:
        Dict[str, Any]: The selected settings.

    Raises:
        FileNotFoundError: If the file specified by filepath does not exist.
        ConfigurationError: If the file does not parse or the profile is missing.
    """
    with open(filepath, 'r') as file:
        try:
            yaml_data = yaml.safe_load(file)
        except yaml.YAMLError as e:
            logging.error(f"Error parsing yaml file {filepath}: {e}")
            raise ConfigurationError(f"{filepath}: {e}") from e
    if yaml_data is None:
        return {}
    if not isinstance(yaml_data, dict):
        raise ConfigurationError(f"{filepath}: top level must be a mapping")

    profiles = {k[len(PROFILE_PREFIX):]: v for k, v in yaml_data.items() if str(k).startswith(PROFILE_PREFIX)}
    if profile is not None:
        if profile not in profiles:
            raise ConfigurationError(f"{filepath}: unknown profile '{profile}', available: {sorted(profiles)}")
        settings = profiles[profile]
    elif DEFAULT_SECTION in yaml_data:
        settings = yaml_data[DEFAULT_SECTION]
    elif profiles:
        raise ConfigurationError(f"{filepath}: choose a profile from {sorted(profiles)}")
    else:
        settings = yaml_data
    if not isinstance(settings, dict):
        raise ConfigurationError(f"{filepath}: settings must be a mapping")
    logging.debug(f"Read configuration {filepath} (profile {profile}): {settings}")
    return dict(settings)

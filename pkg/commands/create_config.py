"""Implementation of the create_config command."""

from monolocapi.session import load_session_config, session_config_to_sections
from monolocapi.utils import append_ending, save_ini


def handle_create_config(args):
    """Writes a configuration file holding every setting with its default for the mode.

    Edit the file and pass it to the run command with --config.
    """
    filename = append_ending(args.file, ".ini")
    sections = session_config_to_sections(load_session_config(None, args.mode))
    save_ini(sections, filename)
    print(f"Default {args.mode} configuration saved to {filename}.")
    return 0

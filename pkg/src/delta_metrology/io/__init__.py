"""File formats, run configuration, reports and the command-line entry point."""
from .config import RunConfig, load_config
from .formats import (load_element_table, parse_spectrum_file, parse_transport_file,
                      read_map_csv, read_scan, write_element_table, write_map_csv,
                      write_scan, write_spectrum_file, write_transport_file)
from .pgm import read_pgm, write_pgm

__all__ = [
    "RunConfig", "load_config", "load_element_table", "parse_spectrum_file",
    "parse_transport_file", "read_map_csv", "read_pgm", "read_scan", "write_element_table",
    "write_map_csv", "write_pgm", "write_scan", "write_spectrum_file", "write_transport_file",
]

#!/usr/bin/env python3
"""
Multibeam Precoding Lab - Main Entry Point

This is the main entry point for the Multibeam Precoding Lab.
It delegates to the CLI module for command-line handling.
"""

from precoding_lab.cli import main

if __name__ == "__main__":
    main()

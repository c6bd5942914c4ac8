#!/usr/bin/env python3
"""
Tests for the CLI module

This module tests the command-line interface of the Multibeam Precoding Lab.
"""

import argparse
import json
from unittest.mock import MagicMock, patch

import pandas as pd
import pytest

from precoding_lab.cli import main, parse_sizes
from precoding_lab.errors import ConfigError, IoError, NonConvergence


@pytest.fixture(autouse=True)
def no_dotenv():
    with patch('precoding_lab.cli.load_dotenv'):
        yield


class TestCLI:
    """Test cases for the CLI module"""

    @patch('precoding_lab.cli.emit_report')
    @patch('precoding_lab.cli.run_scenario')
    @patch('precoding_lab.cli.load_config')
    def test_main_simulate(self, mock_load_config, mock_run_scenario, mock_emit_report):
        """Test the main function with the 'simulate' command"""
        mock_load_config.return_value = MagicMock()
        mock_run_scenario.return_value = MagicMock()

        with patch('sys.argv', ['main.py', 'simulate', '--config', 's.json', '--out', 'out', '--seed', '7']):
            main()

        mock_load_config.assert_called_once_with('s.json', seed=7)
        mock_run_scenario.assert_called_once_with(mock_load_config.return_value)
        mock_emit_report.assert_called_once_with(mock_run_scenario.return_value, 'out')

    @patch('precoding_lab.cli.emit_report')
    @patch('precoding_lab.cli.run_scenario')
    @patch('precoding_lab.cli.load_config')
    def test_main_simulate_default_config(self, mock_load_config, mock_run_scenario, mock_emit_report):
        """Test that --config is optional"""
        with patch('sys.argv', ['main.py', 'simulate', '--out', 'out']):
            main()

        mock_load_config.assert_called_once_with(None, seed=None)

    @patch('precoding_lab.cli.emit_report')
    @patch('precoding_lab.cli.sweep_psat')
    @patch('precoding_lab.cli.load_config')
    def test_main_sweep(self, mock_load_config, mock_sweep_psat, mock_emit_report):
        """Test the main function with the 'sweep' command"""
        report = MagicMock()
        mock_sweep_psat.return_value = (report, pd.DataFrame())

        argv = ['main.py', 'sweep', '--psat-min', '-10', '--psat-max', '10', '--step', '0.5',
                '--out', 'curves']
        with patch('sys.argv', argv):
            main()

        mock_sweep_psat.assert_called_once_with(mock_load_config.return_value, -10.0, 10.0, 0.5)
        mock_emit_report.assert_called_once_with(report, 'curves', include_curves=True)

    @patch('precoding_lab.cli.benchmark_precoders')
    def test_main_bench(self, mock_benchmark, capsys):
        """Test the main function with the 'bench' command"""
        table = pd.DataFrame({"precoder": ["ZF"], "k": [4], "median_seconds": [1e-5],
                              "iterations": [None]})
        mock_benchmark.return_value = (table, {"ZF": 2.9})

        with patch('sys.argv', ['main.py', 'bench', '--sizes', '4,8', '--reps', '3']):
            main()

        mock_benchmark.assert_called_once_with([4, 8], 3)
        assert "ZF: fitted growth exponent 2.90" in capsys.readouterr().out

    @patch('precoding_lab.cli.benchmark_precoders')
    def test_main_bench_writes_csv(self, mock_benchmark, tmp_path):
        table = pd.DataFrame({"precoder": ["ZF"], "k": [4], "median_seconds": [1e-5],
                              "iterations": [None]})
        mock_benchmark.return_value = (table, {"ZF": float("nan")})
        out = tmp_path / "bench.csv"

        with patch('sys.argv', ['main.py', 'bench', '--out', str(out)]):
            main()

        mock_benchmark.assert_called_once_with([4, 8, 16], 5)
        assert out.read_text(encoding="utf-8").startswith("precoder,k,median_seconds,iterations\n")

    @patch('precoding_lab.cli.save_channel')
    @patch('precoding_lab.cli.build_channel')
    @patch('precoding_lab.cli.load_config')
    def test_main_gen_channel(self, mock_load_config, mock_build_channel, mock_save_channel):
        """Test the main function with the 'gen-channel' command"""
        channel = MagicMock()
        mock_build_channel.return_value = (channel, None)

        with patch('sys.argv', ['main.py', 'gen-channel', '--out', 'h.csv']):
            main()

        mock_save_channel.assert_called_once_with(channel, 'h.csv')

    def test_main_closed_loop(self, mocker):
        """Test the main function with the 'closed-loop' command"""
        mock_load_config = mocker.patch('precoding_lab.cli.load_config')
        mock_run_closed_loop = mocker.patch('precoding_lab.cli.run_closed_loop')
        mock_emit = mocker.patch('precoding_lab.cli.emit_closed_loop')

        main(['closed-loop', '--out', 'loop', '--superframes', '50'])

        mock_run_closed_loop.assert_called_once_with(mock_load_config.return_value, 50)
        mock_emit.assert_called_once_with(mock_run_closed_loop.return_value, 'loop')

    def test_main_closed_loop_invalid_count(self, mocker):
        mocker.patch('precoding_lab.cli.load_config')
        mock_run_closed_loop = mocker.patch('precoding_lab.cli.run_closed_loop')

        with pytest.raises(SystemExit) as excinfo:
            main(['closed-loop', '--out', 'loop', '--superframes', '0'])

        assert excinfo.value.code == 1
        mock_run_closed_loop.assert_not_called()

    @patch('precoding_lab.cli.load_config')
    def test_main_config_error(self, mock_load_config):
        """Test that a configuration error exits with code 1"""
        mock_load_config.side_effect = ConfigError("Unknown key(s) in 'scenario': foo")

        with patch('sys.argv', ['main.py', 'simulate', '--out', 'out']):
            with pytest.raises(SystemExit) as excinfo:
                main()

        assert excinfo.value.code == 1

    @patch('precoding_lab.cli.load_config')
    def test_main_io_error(self, mock_load_config):
        mock_load_config.side_effect = IoError("Config file not found: missing.json")

        with patch('sys.argv', ['main.py', 'simulate', '--config', 'missing.json', '--out', 'out']):
            with pytest.raises(SystemExit) as excinfo:
                main()

        assert excinfo.value.code == 1

    @patch('precoding_lab.cli.run_scenario')
    @patch('precoding_lab.cli.load_config')
    def test_main_solver_error(self, mock_load_config, mock_run_scenario):
        mock_run_scenario.side_effect = NonConvergence("stalled")

        with patch('sys.argv', ['main.py', 'simulate', '--out', 'out']):
            with pytest.raises(SystemExit) as excinfo:
                main()

        assert excinfo.value.code == 1

    def test_main_no_command(self):
        """Test the main function without a command"""
        with patch('sys.argv', ['main.py']):
            with pytest.raises(SystemExit) as excinfo:
                main()

        assert excinfo.value.code == 2

    def test_main_argv_argument(self, tmp_path):
        """Test an end-to-end gen-channel run with an explicit argv"""
        out = tmp_path / "h.csv"
        main(['--log-level', 'WARNING', 'gen-channel', '--out', str(out)])
        assert len(out.read_text(encoding="utf-8").splitlines()) == 16

    def test_simulate_twice_gives_identical_files(self, tmp_path, mocker):
        """Test that two simulate runs with the same config and seed write identical bytes"""
        mocker.patch.dict('os.environ', {}, clear=True)
        config = tmp_path / "scenario.json"
        config.write_text(json.dumps({
            "channel": {"geometry": {"rows": 2, "cols": 2}},
            "csi_error": "normal",
            "trials": 2,
            "schemes": [
                {"name": "FFR ZF", "precoder": "ZF"},
                {"name": "FFR MMSE-PAC", "precoder": "MMSE-PAC", "normalization": "PAC"},
                {"name": "4FR ConstPSD", "reuse": "4FR", "power_convention": "ConstPSD"},
            ],
            "sweep": {"psat_min_dbw": 0.0, "psat_max_dbw": 4.0, "step_db": 2.0},
        }), encoding="utf-8")

        for name in ("a", "b"):
            main(['--log-level', 'WARNING', 'simulate', '--config', str(config),
                  '--out', str(tmp_path / name), '--seed', '7'])

        first = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert first == sorted(p.name for p in (tmp_path / "b").iterdir())
        assert "per_ut.csv" in first
        for name in first:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestParseSizes:
    """Test cases for parse_sizes"""

    def test_valid(self):
        assert parse_sizes("4,8,16") == [4, 8, 16]

    @pytest.mark.parametrize("value", ["a,b", "", "1,4"])
    def test_invalid(self, value):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_sizes(value)

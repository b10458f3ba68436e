"""Command-line interface: config merging, CSV and manifest output, exit codes.

End-to-end runs go through ``main`` with small grids and trial counts so
the whole module stays fast; the heavy numerical claims live in the other
test modules. File outputs are checked as bytes where reproducibility is
the contract.
"""

import csv
import math

import pytest

from oamlink.cli import (
    DEFAULTS,
    EXIT_BOUNDARY,
    EXIT_CONFIG,
    EXIT_NONCONVERGED,
    EXIT_OK,
    ConfigError,
    RunConfig,
    _dbm,
    load_config,
    main,
    parse_config_text,
    parse_mode_set_spec,
    write_csv,
    write_manifest,
)


def cfg_with(**overrides):
    raw = dict(DEFAULTS)
    raw.update({k.replace("__", "."): v for k, v in overrides.items()})
    return RunConfig(raw=raw)


def read_csv_file(path):
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    assert lines[0].startswith("# ")
    rows = list(csv.reader(lines[1:]))
    return lines[0][2:], rows[0], rows[1:]


class TestConfigText:
    def test_comments_prefixes_and_values(self):
        text = "\n".join(
            [
                "# a comment",
                "",
                "geometry.w0_m = 0.02",
                "config.mc.seed = 9",
                "manifest.tool = oamlink",
                "  modes.tx =  -2,1  ",
            ]
        )
        out = parse_config_text(text, "inline")
        assert out == {
            "geometry.w0_m": "0.02",
            "mc.seed": "9",
            "modes.tx": "-2,1",
        }

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("geometry.w0 = 0.02", "inline")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate key"):
            parse_config_text("mc.seed = 1\nmc.seed = 2", "inline")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="expected 'key = value'"):
            parse_config_text("mc.seed 1", "inline")

    def test_line_number_in_message(self):
        with pytest.raises(ConfigError, match="inline:3"):
            parse_config_text("# ok\nmc.seed = 1\nnope = 2", "inline")


class TestLoadConfigPrecedence:
    def test_flags_beat_set_beat_file_beat_defaults(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("mc.seed = 1\ngeometry.w0_m = 0.02\n", encoding="utf-8")
        cfg = load_config(str(cfg_file), ["mc.seed=2"], {"mc.seed": "3"})
        assert cfg.text("mc.seed") == "3"
        assert cfg.text("geometry.w0_m") == "0.02"
        assert cfg.text("geometry.distance_m") == DEFAULTS["geometry.distance_m"]

    def test_set_item_validation(self):
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(None, ["nope=1"], {})
        with pytest.raises(ConfigError, match="duplicate key"):
            load_config(None, ["mc.seed=1", "mc.seed=2"], {})
        with pytest.raises(ConfigError, match="KEY=VALUE"):
            load_config(None, ["mc.seed"], {})

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config file"):
            load_config(str(tmp_path / "missing.cfg"), [], {})


class TestModeSpecAndAccessors:
    def test_parse_mode_set_spec(self):
        plain = parse_mode_set_spec("-2|1")
        assert plain.streams == ((-2,), (1,))
        grouped = parse_mode_set_spec("-4,-2|1,3")
        assert grouped.streams == ((-4, -2), (1, 3))
        assert grouped.tx_modes == (-4, -2, 1, 3)
        with pytest.raises(ConfigError, match="bad mode set spec"):
            parse_mode_set_spec("a|b")

    def test_typed_accessors(self):
        cfg = cfg_with()
        assert cfg.number("geometry.w0_m") == 0.025
        assert cfg.integer("receiver.k_r") == 6
        assert cfg.flag("mc.allow_degraded") is False
        assert cfg.numbers("sweep.grid") == ()
        bad = cfg_with(**{"quad__order": "soon", "mc__allow_degraded": "maybe",
                          "sweep__grid": "1,x"})
        with pytest.raises(ConfigError, match="must be an integer"):
            bad.integer("quad.order")
        with pytest.raises(ConfigError, match="must be a number"):
            bad.number("quad.order")
        with pytest.raises(ConfigError, match="true or false"):
            bad.flag("mc.allow_degraded")
        with pytest.raises(ConfigError, match="comma-separated numbers"):
            bad.numbers("sweep.grid")

    def test_structured_accessors(self):
        cfg = cfg_with()
        geom = cfg.geometry()
        assert geom.waist == 0.025
        rx = cfg.receiver()
        assert rx.noise_level == 6.35e-16
        modes = cfg.mode_set()
        assert modes.tx_modes == (-2, 1)
        assert modes.filter_modes == (-2, 1)
        cands = cfg.candidates()
        assert [
            "|".join(",".join(str(m) for m in g) for g in c.streams) for c in cands
        ] == ["-2|2", "-2|1", "-1|1", "-4,-2|1,3"]

    def test_structured_accessor_errors_become_config_errors(self):
        with pytest.raises(ConfigError, match="geometry"):
            cfg_with(geometry__w0_m="-1").geometry()
        with pytest.raises(ConfigError, match="receiver"):
            cfg_with(receiver__k_r="1").receiver()
        with pytest.raises(ConfigError, match="comma-separated integers"):
            cfg_with(modes__tx="a,b").mode_set()
        with pytest.raises(ConfigError, match="modes"):
            cfg_with(modes__tx="1,1").mode_set()

    def test_grouping_accessor(self):
        cfg = cfg_with(modes__tx="-4,-2,1,3", modes__grouping="-4,-2|1,3")
        assert cfg.mode_set().streams == ((-4, -2), (1, 3))

    def test_method_accessors(self):
        assert len(cfg_with(method="exact2d,bessel-sum").methods()) == 2
        with pytest.raises(ConfigError, match="duplicate methods"):
            cfg_with(method="exact2d,exact2d").methods()
        with pytest.raises(ConfigError, match="exactly one method"):
            cfg_with(method="exact2d,bessel-sum").single_method()
        with pytest.raises(ConfigError):
            cfg_with(method="fft").methods()

    def test_pointing_and_scenario(self):
        with pytest.raises(ConfigError, match="exactly one of"):
            cfg_with(pointing__r_ch_m="5").validate_pointing()
        with pytest.raises(ConfigError, match="sigma_theta"):
            cfg_with(pointing__sigma_theta_rad="", pointing__r_ch_m="5").scenario()
        with pytest.raises(ConfigError, match="quad.order"):
            cfg_with(quad__order="8").scenario()
        scen = cfg_with().scenario()
        assert scen.sigma_theta == 3e-5
        assert scen.trials == 1_000_000

    def test_output_path_required(self):
        with pytest.raises(ConfigError, match="set output.path"):
            cfg_with().output_path("bench")
        assert cfg_with(output__path="x.csv").output_path("bench") == "x.csv"


class TestOutputHelpers:
    def test_write_csv_layout(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(str(path), "demo v1", ("a", "b"), [(0.1, 2), (math.nan, "x")])
        raw = path.read_bytes()
        assert raw.startswith(b"# demo v1\r\n")
        assert raw.count(b"\r\n") == 4
        schema, header, rows = read_csv_file(path)
        assert schema == "demo v1"
        assert header == ["a", "b"]
        assert rows == [["0.1", "2"], ["nan", "x"]]

    def test_dbm(self):
        assert _dbm(1e-3, 1.0) == pytest.approx(0.0, abs=1e-12)
        assert _dbm(1.0, 1.0) == pytest.approx(30.0)
        assert _dbm(1e-3, 2.0) == pytest.approx(10.0 * math.log10(2.0))
        assert _dbm(0.0, 1.0) == -math.inf

    def test_manifest_roundtrips_as_config(self, tmp_path):
        cfg = cfg_with(mc__seed="77", output__path=str(tmp_path / "out.csv"))
        man = tmp_path / "out.csv.manifest"
        write_manifest(str(man), "monte-carlo", cfg, {"workers": "2"})
        text = man.read_text(encoding="utf-8")
        assert text.splitlines()[0] == "manifest.tool = oamlink"
        assert "manifest.command = monte-carlo" in text
        assert "manifest.workers = 2" in text
        parsed = parse_config_text(text, str(man))
        assert parsed == dict(cfg.raw)


class TestMainErrors:
    def test_config_error_exit_and_message(self, capsys):
        assert main(["monte-carlo"]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_unknown_set_key(self, tmp_path):
        out = tmp_path / "o.csv"
        args = ["monte-carlo", "-o", str(out), "-s", "bogus=1"]
        assert main(args) == EXIT_CONFIG

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert capsys.readouterr().out.startswith("oamlink ")


class TestCrosstalkCurveCommand:
    def test_happy_path(self, tmp_path):
        out = tmp_path / "xt.csv"
        code = main(
            [
                "crosstalk-curve",
                "--grid",
                "5,10",
                "--method",
                "bessel-sum,exact2d",
                "-o",
                str(out),
            ]
        )
        assert code == EXIT_OK
        schema, header, rows = read_csv_file(out)
        assert schema.startswith("oamlink/crosstalk-curve v1")
        assert header == [
            "r_ch_m", "ell_n", "ell_j", "method", "C_watts", "C_dBm", "status",
        ]
        # 2 radii x 4 mode pairs x 2 methods, method innermost.
        assert len(rows) == 16
        assert [r[3] for r in rows[:4]] == [
            "bessel-sum", "exact2d", "bessel-sum", "exact2d",
        ]
        for r in rows:
            c = float(r[4])
            assert c > 0
            assert float(r[5]) == pytest.approx(10 * math.log10(c * 1000), rel=1e-12)
            assert r[6] == "ok"
        manifest = (tmp_path / "xt.csv.manifest").read_text(encoding="utf-8")
        assert "manifest.rows = 16" in manifest
        assert "manifest.error_rows = 0" in manifest
        assert "config.sweep.grid = 5,10" in manifest

    def test_error_rows_exit_nonconverged(self, tmp_path):
        out = tmp_path / "xt.csv"
        code = main(
            ["crosstalk-curve", "--grid", "0", "--method", "asymptotic",
             "-o", str(out)]
        )
        assert code == EXIT_NONCONVERGED
        _, _, rows = read_csv_file(out)
        assert all(r[6].startswith("error: ValueError") for r in rows)
        assert all(r[4] == "nan" for r in rows)

    def test_needs_radii(self, tmp_path):
        assert main(["crosstalk-curve", "-o", str(tmp_path / "x.csv")]) == EXIT_CONFIG

    def test_single_point_from_pointing_offset(self, tmp_path):
        out = tmp_path / "xt.csv"
        code = main(
            [
                "crosstalk-curve",
                "-s",
                "pointing.r_ch_m=8",
                "-s",
                "pointing.sigma_theta_rad=",
                "-o",
                str(out),
            ]
        )
        assert code == EXIT_OK
        _, _, rows = read_csv_file(out)
        assert len(rows) == 4
        assert all(r[0] == "8.0" for r in rows)


class TestBerCurveCommand:
    def test_happy_path(self, tmp_path):
        out = tmp_path / "ber.csv"
        code = main(
            [
                "ber-curve",
                "--axis",
                "w0",
                "--grid",
                "0.02,0.025",
                "--candidates=-2|1",
                "-s",
                "quad.order=48",
                "-o",
                str(out),
            ]
        )
        assert code == EXIT_OK
        schema, header, rows = read_csv_file(out)
        assert schema.startswith("oamlink/ber-curve v1")
        assert header == [
            "axis_value", "mode_set_id", "method", "ber_avg_raw",
            "ber_avg_clamped", "status",
        ]
        assert [r[0] for r in rows] == ["0.02", "0.025"]
        assert all(r[1] == "-2|1" for r in rows)
        assert all(0 < float(r[3]) < 0.5 for r in rows)

    def test_rejects_offset_axis_and_bad_grid(self, tmp_path):
        out = str(tmp_path / "ber.csv")
        base = ["ber-curve", "--candidates=-2|1", "-o", out]
        assert main(base + ["--axis", "r_ch", "--grid", "1,2"]) == EXIT_CONFIG
        assert main(base + ["--axis", "w0", "--grid", "0.03,0.02"]) == EXIT_CONFIG
        assert main(base + ["--axis", "w0"]) == EXIT_CONFIG


class TestMonteCarloCommand:
    ARGS = [
        "monte-carlo",
        "--trials",
        "20000",
        "--method",
        "bessel-sum",
    ]

    def test_happy_path_and_reproducible_output(self, tmp_path, monkeypatch):
        out1 = tmp_path / "mc1.csv"
        assert main(self.ARGS + ["-o", str(out1)]) == EXIT_OK
        schema, header, rows = read_csv_file(out1)
        assert schema.startswith("oamlink/monte-carlo v1")
        assert header[:5] == ["trials", "errors", "bit_errors", "ber_mc", "ci95"]
        (row,) = rows
        assert row[0] == "20000"
        assert int(row[1]) >= 0
        assert float(row[3]) == pytest.approx(int(row[1]) / 20000)

        # Same run under a different worker count must not move a byte.
        monkeypatch.setenv("OAMLINK_WORKERS", "3")
        out2 = tmp_path / "mc2.csv"
        assert main(self.ARGS + ["-o", str(out2)]) == EXIT_OK
        assert out1.read_bytes() == out2.read_bytes()

    def test_manifest_reruns_byte_identical(self, tmp_path):
        out1 = tmp_path / "mc1.csv"
        assert main(self.ARGS + ["-o", str(out1)]) == EXIT_OK
        manifest = tmp_path / "mc1.csv.manifest"
        out3 = tmp_path / "mc3.csv"
        code = main(["monte-carlo", "-c", str(manifest), "-o", str(out3)])
        assert code == EXIT_OK
        assert out3.read_bytes() == out1.read_bytes()

    def test_degraded_abort(self, tmp_path, capsys):
        out = tmp_path / "mc.csv"
        args = self.ARGS + ["-s", "pointing.sigma_theta_rad=3e-06", "-o", str(out)]
        assert main(args) == EXIT_NONCONVERGED
        assert "below the" in capsys.readouterr().err
        assert not out.exists()


class TestOptimizeCommand:
    def test_interior_optimum(self, tmp_path):
        out = tmp_path / "opt.txt"
        code = main(
            [
                "optimize",
                "--lo",
                "0.008",
                "--hi",
                "0.03",
                "--tol",
                "0.002",
                "-s",
                "quad.order=48",
                "-o",
                str(out),
            ]
        )
        assert code == EXIT_OK
        report = dict(
            line.split(" = ")
            for line in out.read_text(encoding="utf-8").splitlines()
        )
        assert report["optimize.boundary"] == "false"
        assert 0.009 < float(report["optimize.w0_opt_m"]) < 0.016
        assert float(report["optimize.bracket_lo_m"]) < float(
            report["optimize.w0_opt_m"]
        )
        assert float(report["optimize.bracket_mid_ber"]) <= float(
            report["optimize.bracket_lo_ber"]
        )

    def test_boundary_exit_code(self, tmp_path):
        out = tmp_path / "opt.txt"
        code = main(
            [
                "optimize",
                "--lo",
                "0.02",
                "--hi",
                "0.03",
                "--tol",
                "0.002",
                "-s",
                "quad.order=48",
                "-o",
                str(out),
            ]
        )
        assert code == EXIT_BOUNDARY
        assert "optimize.boundary = true" in out.read_text(encoding="utf-8")

    def test_bad_bounds(self, tmp_path):
        args = ["optimize", "--lo", "0.03", "--hi", "0.01", "-o",
                str(tmp_path / "o.txt")]
        assert main(args) == EXIT_CONFIG


class TestRankModesCommand:
    def test_ranking_csv(self, tmp_path):
        out = tmp_path / "rank.csv"
        code = main(
            [
                "rank-modes",
                "--candidates=-2|1;-1|1",
                "--method",
                "radial-sum",
                "-s",
                "quad.order=48",
                "-o",
                str(out),
            ]
        )
        assert code == EXIT_OK
        schema, header, rows = read_csv_file(out)
        assert schema.startswith("oamlink/rank-modes v1")
        assert header == ["rank", "mode_set_id", "ber_avg", "method", "converged",
                          "status"]
        assert [r[0] for r in rows] == ["1", "2"]
        assert {r[1] for r in rows} == {"-2|1", "-1|1"}
        bers = [float(r[2]) for r in rows]
        assert bers == sorted(bers)

    def test_duplicate_candidates(self, tmp_path):
        args = ["rank-modes", "--candidates=-2|1;-2|1", "-o",
                str(tmp_path / "r.csv")]
        assert main(args) == EXIT_CONFIG

    def test_empty_candidates(self, tmp_path):
        args = ["rank-modes", "--candidates=", "-o", str(tmp_path / "r.csv")]
        assert main(args) == EXIT_CONFIG


class TestBenchCommand:
    SETTINGS = [
        "-s", "bench.grid_points=2",
        "-s", "bench.r_min_m=5",
        "-s", "bench.r_max_m=10",
        "-s", "bench.repetitions=3",
        "-s", "bench.mc_trials=1000",
    ]

    def test_csv_is_timing_free_and_reproducible(self, tmp_path):
        out1 = tmp_path / "bench1.csv"
        assert main(["bench", "-o", str(out1)] + self.SETTINGS) == EXIT_OK
        schema, header, rows = read_csv_file(out1)
        assert schema.startswith("oamlink/bench v1")
        assert header == ["method", "role", "grid_size", "repetitions", "mc_trials"]
        # exact2d is prepended to the configured method list.
        assert [r[0] for r in rows] == [
            "exact2d", "bessel-sum", "monte-carlo", "quadrature-average",
        ]
        out2 = tmp_path / "bench2.csv"
        assert main(["bench", "-o", str(out2)] + self.SETTINGS) == EXIT_OK
        assert out1.read_bytes() == out2.read_bytes()
        manifest = (tmp_path / "bench1.csv.manifest").read_text(encoding="utf-8")
        assert "manifest.median_s.exact2d = " in manifest
        assert "manifest.speedup.bessel-sum = " in manifest
        assert "manifest.mc_over_analytic = " in manifest

    def test_bad_bench_range(self, tmp_path):
        args = ["bench", "-o", str(tmp_path / "b.csv"), "-s", "bench.r_min_m=30"]
        assert main(args) == EXIT_CONFIG

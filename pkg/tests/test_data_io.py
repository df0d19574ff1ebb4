import numpy as np
import pytest

from pgdenoise import data_io as dio
from pgdenoise.errors import ConfigurationError, SchemaError
from pgdenoise.network import Mlp
from pgdenoise.problems import make_lpbf_problem, make_sho_problem


class TestInjectNoise:
    def test_zero_fraction_is_identity(self):
        y = np.linspace(-1, 1, 50)
        np.testing.assert_array_equal(dio.inject_noise(y, 0.0, seed=3), y)

    def test_sho_noise_std_matches_fraction(self):
        # sigma = p * max|cos| = 0.25; sample std over 1e5 draws within 1%
        t = np.linspace(0, 2 * np.pi, 100_000)
        y = np.cos(t)
        y_noisy = dio.inject_noise(y, 0.25, seed=0)
        s = np.std(y_noisy - y)
        assert 0.2475 < s < 0.2525

    def test_deterministic_given_seed(self):
        y = np.sin(np.linspace(0, 3, 1000))
        a = dio.inject_noise(y, 0.1, seed=7)
        b = dio.inject_noise(y, 0.1, seed=7)
        np.testing.assert_array_equal(a, b)
        c = dio.inject_noise(y, 0.1, seed=8)
        assert not np.array_equal(a, c)

    def test_unbiased(self):
        y = np.cos(np.linspace(0, 5, 20_000))
        eps = dio.inject_noise(y, 0.2, seed=1) - y
        assert abs(eps.mean()) < 3 * 0.2 / np.sqrt(eps.size)

    def test_all_zero_targets_warn_and_pass_through(self):
        y = np.zeros(10)
        np.testing.assert_array_equal(dio.inject_noise(y, 0.5, seed=0), y)

    def test_negative_fraction_rejected(self):
        with pytest.raises(ConfigurationError):
            dio.inject_noise(np.ones(3), -0.1, seed=0)


class TestDatasets:
    def test_make_dataset_sho(self):
        prob = make_sho_problem()
        ds = dio.make_dataset(prob, 64, 0.25, seed=5)
        assert len(ds) == 64
        assert ds.context.shape == (64, 0)
        np.testing.assert_allclose(ds.y_true, np.cos(ds.coords[:, 0]))
        assert ds.noise_fraction == 0.25

    def test_same_sites_across_seeds(self):
        prob = make_sho_problem()
        a = dio.make_dataset(prob, 32, 0.1, seed=1)
        b = dio.make_dataset(prob, 32, 0.1, seed=2)
        np.testing.assert_array_equal(a.coords, b.coords)
        assert not np.array_equal(a.y_noisy, b.y_noisy)

    def test_save_load_round_trip(self, tmp_path):
        prob = make_sho_problem()
        ds = dio.make_dataset(prob, 40, 0.15, seed=9)
        path = tmp_path / "sho.csv"
        dio.save_dataset(ds, prob, path)
        loaded = dio.load_dataset(path, prob)
        np.testing.assert_array_equal(loaded.coords, ds.coords)
        np.testing.assert_array_equal(loaded.y_noisy, ds.y_noisy)
        np.testing.assert_array_equal(loaded.y_true, ds.y_true)
        assert loaded.noise_fraction == ds.noise_fraction
        assert loaded.seed == ds.seed

    def test_lpbf_dataset_requires_reference(self):
        with pytest.raises(ConfigurationError):
            dio.make_dataset(make_lpbf_problem(), 8, 0.1, seed=0)


def _write_track(tmp_path, name="track_1.csv", values=None, headers=None, col="tep"):
    headers = headers if headers is not None else {
        "track_id": "1",
        "power_W": "240",
        "speed_mm_s": "1464",
        "k": "0.207",
        "rho_cp": "0.005054",
    }
    values = values if values is not None else [(0.0, 1500.0), (0.1, 1600.0)]
    lines = [f"# {k}: {v}" for k, v in headers.items()]
    lines.append(f"pos_mm,{col}")
    lines += [f"{p},{v}" for p, v in values]
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


class TestTrackIo:
    def test_round_trip_in_range(self, tmp_path):
        rng = np.random.default_rng(0)
        track = dio.TepTrack(
            track_id=3,
            power_w=300.0,
            speed_mm_s=1500.0,
            k=0.208,
            rho_cp=0.005083,
            pos_mm=np.linspace(0, 1.5, 37),
            tep=rng.uniform(1000, 2500, size=37),
        )
        dio.write_tracks([track], tmp_path)
        loaded = dio.load_tracks(tmp_path)
        assert len(loaded) == 1
        assert loaded[0] == track
        assert loaded[0].n_dropped == 0

    def test_out_of_range_values_dropped_with_count(self, tmp_path):
        rng = np.random.default_rng(1)
        n_total, n_bad = 532, 21
        values = rng.uniform(1100, 2400, size=n_total)
        bad_idx = rng.choice(n_total, size=n_bad, replace=False)
        values[bad_idx[:10]] = rng.uniform(-8000, 900, size=10)
        values[bad_idx[10:]] = rng.uniform(2600, 110_000, size=11)
        path = _write_track(
            tmp_path, values=list(zip(np.linspace(0, 1.5, n_total), values))
        )
        track = dio.load_tracks(path)[0]
        assert len(track.tep) == 511
        assert track.n_dropped == 21
        assert np.all((track.tep >= 1000) & (track.tep <= 2500))

    def test_extreme_negative_tep_dropped(self, tmp_path):
        path = _write_track(tmp_path, values=[(0.0, -7900.0), (0.1, 1500.0)])
        track = dio.load_tracks(path)[0]
        assert len(track.tep) == 1
        assert track.n_dropped == 1

    def test_all_in_range_drops_nothing(self, tmp_path):
        path = _write_track(tmp_path, values=[(0.0, 1000.0), (0.1, 2500.0)])
        track = dio.load_tracks(path)[0]
        assert track.n_dropped == 0

    def test_malformed_row_reports_line_number(self, tmp_path):
        path = _write_track(tmp_path, values=[(0.0, 1500.0), (0.1, "oops")])
        with pytest.raises(SchemaError, match=":8:"):
            dio.load_tracks(path)

    def test_missing_header_is_schema_error(self, tmp_path):
        path = _write_track(
            tmp_path,
            headers={"track_id": "1", "power_W": "240"},
        )
        with pytest.raises(SchemaError, match="missing required headers"):
            dio.load_tracks(path)

    def test_wrong_field_count_reports_line(self, tmp_path):
        path = tmp_path / "track_1.csv"
        path.write_text(
            "# track_id: 1\n# power_W: 240\n# speed_mm_s: 1464\n"
            "# k: 0.207\n# rho_cp: 0.005\npos_mm,tep\n0.0,1500.0,9,9\n"
        )
        with pytest.raises(SchemaError, match=":7:"):
            dio.load_tracks(path)

    def test_ted_column_parsed_but_optional(self, tmp_path):
        path = tmp_path / "track_1.csv"
        path.write_text(
            "# track_id: 1\n# power_W: 240\n# speed_mm_s: 1464\n"
            "# k: 0.207\n# rho_cp: 0.005\npos_mm,tep,ted\n0.0,1500.0,42.0\n0.1,1501.0,43.0\n"
        )
        track = dio.load_tracks(path)[0]
        np.testing.assert_array_equal(track.ted, [42.0, 43.0])

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(SchemaError):
            dio.load_tracks(tmp_path)


def _toy_physics(seed=0):
    prob = make_lpbf_problem()
    shift, scale = prob.input_norm()
    return Mlp.create(
        [8, 12, 12, 1],
        "sine",
        seed=seed,
        input_norm=(shift, scale),
        output_norm=prob.output_norm,
    )


class TestSynthTracks:
    def test_zero_noise_truth_equals_track(self):
        net = _toy_physics()
        tracks, truths = dio.synth_tracks(net, p=0.0, seed=4, n_points=50)
        for tr, truth in zip(tracks, truths):
            np.testing.assert_array_equal(tr.tep, truth.tep)
            np.testing.assert_array_equal(tr.pos_mm, truth.pos_mm)

    def test_four_corner_specs_written_with_headers(self, tmp_path):
        net = _toy_physics()
        tracks, truths = dio.synth_tracks(net, p=0.1, seed=2, n_points=40)
        assert len(tracks) == 4
        dio.write_tracks(tracks, tmp_path, truths)
        files = sorted(tmp_path.glob("track_*.csv"))
        assert len(files) == 8  # 4 tracks + 4 sidecars
        loaded = dio.load_tracks(tmp_path)
        assert [t.power_w for t in loaded] == [240.0, 240.0, 360.0, 360.0]
        assert [t.speed_mm_s for t in loaded] == [1464.0, 1607.0, 1464.0, 1607.0]
        assert all("tep_scale" in t.extras for t in loaded)

    def test_values_clipped_into_range_and_counted(self):
        net = _toy_physics()
        tracks, _ = dio.synth_tracks(net, p=0.5, seed=1, n_points=200)
        for tr in tracks:
            assert np.all((tr.tep >= 1000) & (tr.tep <= 2500))
        assert sum(int(t.extras["clipped"]) for t in tracks) > 0

    def test_deterministic_given_seed(self):
        net = _toy_physics()
        a, _ = dio.synth_tracks(net, p=0.2, seed=11, n_points=30)
        b, _ = dio.synth_tracks(net, p=0.2, seed=11, n_points=30)
        for ta, tb in zip(a, b):
            np.testing.assert_array_equal(ta.tep, tb.tep)

    def test_tracks_to_dataset_pairs_truth_after_filtering(self, tmp_path):
        net = _toy_physics()
        tracks, truths = dio.synth_tracks(net, p=0.3, seed=5, n_points=60)
        dio.write_tracks(tracks, tmp_path, truths)
        loaded = dio.load_tracks(tmp_path)
        loaded_truths = [
            dio.load_track_truth(tmp_path / f"track_{t.track_id}.csv".replace(".csv", ".truth.csv"))
            for t in loaded
        ]
        ds = dio.tracks_to_dataset(loaded, loaded_truths)
        assert len(ds) == sum(len(t.tep) for t in loaded)
        assert ds.y_true is not None and len(ds.y_true) == len(ds)
        assert ds.context.shape[1] == 4

    def test_scale_physics_to_tep_is_exact_affine(self):
        net = _toy_physics()
        scaled = dio.scale_physics_to_tep(net, 2.0, 100.0)
        x = np.hstack(
            [
                np.random.default_rng(3).normal(scale=1e-4, size=(10, 4)),
                np.tile([120.0, 1.5, 208.0, 5.08e6], (10, 1)),
            ]
        )
        np.testing.assert_allclose(scaled.predict(x), 2.0 * net.predict(x) + 100.0, rtol=1e-14)
        np.testing.assert_array_equal(scaled.params, net.params)

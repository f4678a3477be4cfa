import numpy as np
import pytest

from texsr.oracle import (BicubicOracle, CheatOracle, OracleFailure,
                          OracleProtocolError, OracleTransportError,
                          OracleUnsupportedScale, SharpenOracle, SidecarOracle,
                          SrRequest, gaussian_blur, parse_oracle_spec)

from .stub_sidecar import StubSidecar


def impulse(n=8):
    img = np.zeros((n, n, 3))
    img[n // 2, n // 2] = 1.0
    return img


class TestSrRequest:
    def test_scale_validation(self):
        with pytest.raises(OracleUnsupportedScale):
            SrRequest(image=np.zeros((4, 4, 3)), scale=3)

    def test_shape_validation(self):
        from texsr.oracle import OracleError
        with pytest.raises(OracleError):
            SrRequest(image=np.zeros((4, 4)), scale=2)


class TestBicubicOracle:
    def test_constant(self):
        out = BicubicOracle().upscale(SrRequest(image=np.full((4, 4, 3), 0.3), scale=2))
        np.testing.assert_allclose(out, 0.3, atol=1e-12)
        assert out.shape == (8, 8, 3)

    def test_impulse_kernel_footprint(self):
        # 2x upscale of a centered impulse reproduces the Catmull-Rom taps
        out = BicubicOracle().upscale(SrRequest(image=impulse(8), scale=2))

        def catrom(t):
            return np.array([
                -0.5 * t ** 3 + t ** 2 - 0.5 * t,
                1.5 * t ** 3 - 2.5 * t ** 2 + 1.0,
                -1.5 * t ** 3 + 2.0 * t ** 2 + 0.5 * t,
                0.5 * t ** 3 - 0.5 * t ** 2,
            ])

        # output row y samples source at (y+0.5)/2-0.5; fractional part 0.25/0.75
        w_lo = catrom(0.25)
        w_hi = catrom(0.75)
        # pixel (8,8) has source coord 3.75 -> base 3, frac 0.75; impulse at tap 2
        assert out[8, 8, 0] == pytest.approx(np.clip(w_hi[2] * w_hi[2], 0, 1), abs=1e-6)
        # pixel (9,9): source 4.25 -> base 4, frac 0.25; impulse is tap index 1
        assert out[9, 9, 0] == pytest.approx(np.clip(w_lo[1] * w_lo[1], 0, 1), abs=1e-6)

    def test_roundtrip_smooth(self, rng):
        from scipy.ndimage import gaussian_filter
        from texsr.texture import TextureMap, avg_pool
        x = gaussian_filter(rng.random((16, 16, 3)), sigma=(2, 2, 0), mode="wrap")
        x = (x - x.min()) / np.ptp(x)
        up = BicubicOracle().upscale(SrRequest(image=x, scale=4))
        back = avg_pool(TextureMap(up), 4).data
        assert np.abs(back - x).max() < 0.02

    def test_identity_at_scale_one(self, rng):
        img = rng.random((6, 6, 3))
        out = BicubicOracle().upscale(SrRequest(image=img, scale=1))
        np.testing.assert_array_equal(out, img)


class TestSharpenOracle:
    def test_constant_unchanged(self):
        out = SharpenOracle().upscale(SrRequest(image=np.full((4, 4, 3), 0.4), scale=4))
        np.testing.assert_allclose(out, 0.4, atol=1e-12)

    def test_step_edge_clamped(self):
        img = np.zeros((8, 8, 3))
        img[:, 4:] = 1.0
        out = SharpenOracle().upscale(SrRequest(image=img, scale=2))
        assert out.max() <= 1.0
        assert out.min() >= 0.0

    def test_sharpen_increases_variance(self, rng):
        from scipy.ndimage import gaussian_filter
        wins = 0
        for i in range(20):
            r = np.random.default_rng(1000 + i)
            img = gaussian_filter(r.random((12, 12, 3)), sigma=(1.2, 1.2, 0), mode="wrap")
            img = (img - img.min()) / max(np.ptp(img), 1e-9)
            req = SrRequest(image=img, scale=2)
            sharp = SharpenOracle().upscale(req)
            plain = BicubicOracle().upscale(req)
            if sharp.var() >= plain.var():
                wins += 1
        assert wins == 20

    def test_identity_at_scale_one(self, rng):
        img = rng.random((6, 6, 3))
        out = SharpenOracle().upscale(SrRequest(image=img, scale=1))
        np.testing.assert_array_equal(out, img)

    def test_outputs_in_range_and_finite(self, rng):
        img = rng.random((10, 10, 3))
        out = SharpenOracle().upscale(SrRequest(image=img, scale=4))
        assert np.all(np.isfinite(out))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_blur_kernel_is_normalized(self):
        ones = np.ones((9, 9, 1))
        np.testing.assert_allclose(gaussian_blur(ones), 1.0, atol=1e-12)


class TestCheatOracle:
    def test_returns_stored_bit_identical(self, rng):
        img = rng.random((16, 16, 3))
        oracle = CheatOracle({3: img})
        out = oracle.upscale(SrRequest(image=np.zeros((4, 4, 3)), scale=4, view_id=3))
        np.testing.assert_array_equal(out, img)

    def test_missing_id_errors(self):
        oracle = CheatOracle({})
        with pytest.raises(OracleFailure):
            oracle.upscale(SrRequest(image=np.zeros((4, 4, 3)), scale=4, view_id=9))

    def test_texture_request_uses_fallback(self, rng):
        img = rng.random((4, 4, 3))
        oracle = CheatOracle({})
        out = oracle.upscale(SrRequest(image=img, scale=2, view_id=-1))
        ref = BicubicOracle().upscale(SrRequest(image=img, scale=2))
        np.testing.assert_array_equal(out, ref)

    def test_wrong_dims_in_store(self, rng):
        oracle = CheatOracle({1: rng.random((5, 5, 3))})
        with pytest.raises(OracleFailure):
            oracle.upscale(SrRequest(image=np.zeros((4, 4, 3)), scale=4, view_id=1))


class TestSidecarClient:
    def test_matches_builtin_sharpen(self, rng):
        img = rng.random((12, 12, 3))
        with StubSidecar("ok") as stub:
            client = SidecarOracle("127.0.0.1", stub.port, timeout=10)
            out = client.upscale(SrRequest(image=img, scale=2))
            client.close()
        ref = SharpenOracle().upscale(SrRequest(image=img.astype(np.float32).astype(np.float64), scale=2))
        assert np.abs(out - ref).max() < 1e-3

    def test_connection_refused_is_transport_error(self):
        client = SidecarOracle("127.0.0.1", 1, timeout=0.5)
        with pytest.raises(OracleTransportError, match="127.0.0.1:1"):
            client.upscale(SrRequest(image=np.zeros((4, 4, 3)), scale=2))

    def test_wrong_dims_is_protocol_error(self, rng):
        with StubSidecar("wrong_dims") as stub:
            client = SidecarOracle("127.0.0.1", stub.port, timeout=10)
            with pytest.raises(OracleProtocolError, match="expected"):
                client.upscale(SrRequest(image=rng.random((8, 8, 3)), scale=2))

    def test_garbage_header_is_protocol_error(self, rng):
        with StubSidecar("garbage_header") as stub:
            client = SidecarOracle("127.0.0.1", stub.port, timeout=10)
            with pytest.raises(OracleProtocolError):
                client.upscale(SrRequest(image=rng.random((8, 8, 3)), scale=2))

    def test_error_status_is_failure(self, rng):
        with StubSidecar("error_status") as stub:
            client = SidecarOracle("127.0.0.1", stub.port, timeout=10)
            with pytest.raises(OracleFailure, match="model exploded"):
                client.upscale(SrRequest(image=rng.random((8, 8, 3)), scale=2))

    def test_truncated_payload_is_protocol_error(self, rng):
        with StubSidecar("truncated_payload") as stub:
            client = SidecarOracle("127.0.0.1", stub.port, timeout=10)
            with pytest.raises(OracleProtocolError):
                client.upscale(SrRequest(image=rng.random((8, 8, 3)), scale=2))

    def test_wrong_id_is_protocol_error(self, rng):
        with StubSidecar("wrong_id") as stub:
            client = SidecarOracle("127.0.0.1", stub.port, timeout=10)
            with pytest.raises(OracleProtocolError, match="in flight"):
                client.upscale(SrRequest(image=rng.random((8, 8, 3)), scale=2))


class TestParseOracleSpec:
    def test_builtins(self):
        assert isinstance(parse_oracle_spec("bicubic"), BicubicOracle)
        assert isinstance(parse_oracle_spec("sharpen"), SharpenOracle)

    def test_cheat_dir(self, tmp_path):
        oracle = parse_oracle_spec(f"cheat:{tmp_path}")
        assert isinstance(oracle, CheatOracle)

    def test_sidecar(self):
        oracle = parse_oracle_spec("sidecar:localhost:9000")
        assert isinstance(oracle, SidecarOracle)
        assert oracle.endpoint == "localhost:9000"

    def test_unknown(self):
        with pytest.raises(ValueError):
            parse_oracle_spec("magic")

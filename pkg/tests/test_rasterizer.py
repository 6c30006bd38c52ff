import numpy as np
import pytest

from splatseg.core_model import Gaussian, SceneModel, logit, sigmoid
from splatseg.rasterizer import (RenderOutput, project, rasterize,
                                 rasterize_backward, set_num_threads)

import oracles
from conftest import make_camera, make_random_scene


def on_axis_gaussian(depth=2.0, **overrides):
    kwargs = dict(position=[0.0, 0.0, depth], log_scale=np.log([0.1, 0.1, 0.1]),
                  rotation=[1.0, 0.0, 0.0, 0.0], opacity_logit=0.0,
                  color=[1.0, 0.0, 0.0], feature=np.zeros(16))
    kwargs.update(overrides)
    return Gaussian(**kwargs)


class TestProject:
    def test_axis_point_hits_principal_point(self):
        cam = make_camera(64, focal=100.0)
        p = project(on_axis_gaussian(depth=2.0), cam)
        assert np.allclose(p.mean2d, [32.0, 32.0])
        assert p.depth == 2.0

    def test_behind_camera_culled(self):
        cam = make_camera(64)
        assert project(on_axis_gaussian(depth=-1.0), cam) is None

    def test_near_plane_culled(self):
        cam = make_camera(64)
        assert project(on_axis_gaussian(depth=0.01), cam) is None

    def test_far_off_screen_culled(self):
        cam = make_camera(16)
        g = on_axis_gaussian(position=[50.0, 0.0, 2.0])
        assert project(g, cam) is None

    def test_cov2d_matches_numeric_jacobian(self, rng):
        # EWA covariance equals numeric Jacobian propagation of Sigma.
        cam = make_camera(32, focal=60.0)
        for _ in range(10):
            g = on_axis_gaussian(
                position=[rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                          rng.uniform(1.5, 3.0)],
                rotation=rng.standard_normal(4),
                log_scale=rng.uniform(np.log(0.05), np.log(0.3), 3))
            p = project(g, cam)
            t = cam.rotation @ g.position + cam.translation
            j = oracles.numeric_projection_jacobian(t, cam.fx, cam.fy)
            m = j @ cam.rotation
            ref = m @ oracles.covariance_ref(g.log_scale, g.rotation) @ m.T \
                + 0.3 * np.eye(2)
            assert np.allclose(p.cov2d, ref, rtol=1e-6)


class TestRasterizeForward:
    def test_single_splat_at_pixel_center(self):
        # Mean exactly on the center of pixel (8, 8): g = 1 there.
        cam = make_camera(16, focal=40.0)
        depth = 2.0
        x = (8.5 - cam.cx) * depth / cam.fx
        y = (8.5 - cam.cy) * depth / cam.fy
        g = on_axis_gaussian(position=[x, y, depth], opacity_logit=logit(0.8))
        out = rasterize(SceneModel.from_gaussians([g]), cam)
        assert np.allclose(out.color[8, 8], [0.8, 0.0, 0.0], atol=1e-12)
        assert np.isclose(out.alpha[8, 8], 0.8, atol=1e-12)

    def test_two_coincident_splats_composite(self):
        # Both means project exactly onto the center of pixel (8, 8).
        cam = make_camera(16, focal=40.0)
        depth_front, depth_back = 2.0, 2.5
        xf = (8.5 - cam.cx) * depth_front / cam.fx
        xb = (8.5 - cam.cx) * depth_back / cam.fx
        front = on_axis_gaussian(position=[xf, xf, depth_front],
                                 opacity_logit=logit(0.5), color=[1.0, 0.0, 0.0])
        back = on_axis_gaussian(position=[xb, xb, depth_back],
                                opacity_logit=logit(0.5), color=[0.0, 1.0, 0.0])
        out = rasterize(SceneModel.from_gaussians([front, back]), cam)
        assert np.allclose(out.color[8, 8], [0.5, 0.25, 0.0], atol=1e-12)
        assert np.isclose(out.alpha[8, 8], 0.75, atol=1e-12)

    def test_background_composited(self):
        cam = make_camera(16, focal=40.0)
        g = on_axis_gaussian(opacity_logit=logit(0.8))
        out = rasterize(SceneModel.from_gaussians([g]), cam,
                        background=[0.0, 0.0, 1.0])
        assert np.allclose(out.color[0, 0], [0.0, 0.0, 1.0])  # untouched corner
        center = out.color[8, 8]
        assert center[2] == pytest.approx(1.0 - out.alpha[8, 8], abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_naive_reference(self, seed):
        # Tiled renderer must equal the naive per-pixel full-sort oracle.
        scene = make_random_scene(20, seed=seed)
        cam = make_camera(24)
        bg = np.array([0.2, 0.1, 0.4])
        out = rasterize(scene, cam, bg)
        color, feature, alpha, depth = oracles.reference_render(scene, cam, bg)
        assert np.allclose(out.color, color, atol=1e-6)
        assert np.allclose(out.feature, feature, atol=1e-6)
        assert np.allclose(out.alpha, alpha, atol=1e-6)
        assert np.allclose(out.depth, depth, atol=1e-6)

    def test_weight_invariants(self):
        # Per-pixel weights are non-negative and sum to alpha <= 1.
        scene = make_random_scene(30, seed=5)
        cam = make_camera(16)
        out = rasterize(scene, cam)
        assert np.all(out.alpha >= 0.0)
        assert np.all(out.alpha <= 1.0)

    def test_deterministic_and_thread_invariant(self):
        scene = make_random_scene(25, seed=7)
        cam = make_camera(48)
        a = rasterize(scene, cam)
        b = rasterize(scene, cam)
        assert np.array_equal(a.color, b.color)
        set_num_threads(4)
        try:
            c = rasterize(scene, cam)
        finally:
            set_num_threads(1)
        assert np.array_equal(a.color, c.color)
        assert np.array_equal(a.feature, c.feature)
        assert np.array_equal(a.depth, c.depth)

    def test_feature_channels_track_color(self):
        # Features equal to colors in dims 0:3 composite identically.
        scene = make_random_scene(15, seed=9)
        scene.features[:, :3] = scene.colors
        cam = make_camera(16)
        bg = np.array([0.3, 0.6, 0.9])
        out = rasterize(scene, cam, bg)
        expected = out.color - (1.0 - out.alpha)[:, :, None] * bg
        assert np.allclose(out.feature[:, :, :3], expected, atol=1e-12)

    def test_depth_tie_break_by_index(self):
        # Two coincident, equal-depth splats: index order decides who is front.
        cam = make_camera(8, focal=20.0)
        a = on_axis_gaussian(opacity_logit=logit(0.6), color=[1.0, 0.0, 0.0])
        b = on_axis_gaussian(opacity_logit=logit(0.6), color=[0.0, 1.0, 0.0])
        out = rasterize(SceneModel.from_gaussians([a, b]), cam)
        center = out.color[4, 4]
        assert center[0] > center[1]  # index 0 composited first


class TestRasterizeBackward:
    def zero_upstream(self, cam):
        return RenderOutput(color=np.zeros((cam.height, cam.width, 3)),
                            feature=np.zeros((cam.height, cam.width, 16)),
                            alpha=np.zeros((cam.height, cam.width)),
                            depth=np.zeros((cam.height, cam.width)))

    def random_upstream(self, cam, rng):
        return RenderOutput(
            color=rng.standard_normal((cam.height, cam.width, 3)),
            feature=rng.standard_normal((cam.height, cam.width, 16)) * 0.3,
            alpha=rng.standard_normal((cam.height, cam.width)) * 0.5,
            depth=rng.standard_normal((cam.height, cam.width)) * 0.1)

    def test_zero_upstream_gives_zero_grads(self):
        scene = make_random_scene(8, seed=0)
        cam = make_camera(16)
        grads = rasterize_backward(scene, cam, None, self.zero_upstream(cam))
        for name in ("positions", "log_scales", "rotations", "opacity_logits",
                     "colors", "features"):
            assert not np.any(getattr(grads, name))

    def test_color_gradient_is_weight_sum(self):
        # Color enters linearly: dL/dc = sum_p w(p) * upstream_color(p).
        scene = make_random_scene(6, seed=3)
        cam = make_camera(16)
        up = self.zero_upstream(cam)
        up.color[:, :, 0] = 1.0
        grads = rasterize_backward(scene, cam, None, up)
        # Render each Gaussian's weight by giving it color 1 on black:
        probe = scene.copy()
        probe.colors[:] = 0.0
        for i in range(len(scene)):
            probe_i = probe.copy()
            probe_i.colors[i, 0] = 1.0
            out = rasterize(probe_i, cam)
            assert np.isclose(grads.colors[i, 0], out.color[:, :, 0].sum(),
                              rtol=1e-10, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        scene = make_random_scene(4)
        cam = make_camera(16)
        up = self.zero_upstream(cam)
        up.color = up.color[:8]
        with pytest.raises(ValueError):
            rasterize_backward(scene, cam, None, up)

    def test_matches_finite_differences(self, rng):
        scene = make_random_scene(10, seed=11)
        cam = make_camera(16)
        bg = np.array([0.15, 0.3, 0.05])
        up = self.random_upstream(cam, rng)

        def loss(s):
            out = rasterize(s, cam, bg)
            return float((out.color * up.color).sum()
                         + (out.feature * up.feature).sum()
                         + (out.alpha * up.alpha).sum()
                         + (out.depth * up.depth).sum())

        grads = rasterize_backward(scene, cam, bg, up)
        numeric = oracles.scene_fd_grads(loss, scene, step=1e-4)
        for group in oracles.SCENE_GROUPS:
            worst, ok = oracles.fd_compare(getattr(grads, group), numeric[group])
            assert ok, f"{group}: worst relative error {worst:.2e}"

    def test_culled_gaussians_get_zero_grads(self, rng):
        scene = make_random_scene(6, seed=2)
        scene.positions[3, 2] = -5.0  # behind the camera
        cam = make_camera(16)
        grads = rasterize_backward(scene, cam, None, self.random_upstream(cam, rng))
        assert not grads.visible[3]
        assert not np.any(grads.positions[3])
        assert not np.any(grads.rotations[3])

import pytest

from active_look.config import (
    ENV_CONFIG_VAR,
    EndpointsConfig,
    NoiseConfig,
    PipelineConfig,
    load_config,
)

TOML = """
zoom_scale = 2.0
target_long_edge = 256
rng_seed = 7
policy = "union"

[arbitration]
tau_base = 0.55
delta = 0.05
budget = 1152

[experts]
score_threshold_a = 0.25
score_threshold_b = 0.35

[style]
trusted_color = [1, 2, 3]
line_width = 5
draw_labels = false

[noise]
enabled = true
max_iou = 0.2

[endpoints]
generate_url = "http://example:9000/generate"
"""


class TestDefaults:
    def test_default_pipeline_config(self):
        cfg = PipelineConfig()
        assert cfg.zoom_scale == 1.5
        assert cfg.target_long_edge == 384
        assert cfg.rng_seed == 42
        assert cfg.temperature == 1.0
        assert cfg.arbitration.tau_base == 0.6
        assert cfg.noise == NoiseConfig(enabled=False, max_iou=0.3)

    def test_no_path_no_env(self, monkeypatch):
        monkeypatch.delenv(ENV_CONFIG_VAR, raising=False)
        cfg, endpoints = load_config()
        assert cfg == PipelineConfig()
        assert endpoints == EndpointsConfig()

    def test_validation(self):
        with pytest.raises(ValueError):
            PipelineConfig(zoom_scale=5.0)
        with pytest.raises(ValueError):
            PipelineConfig(target_long_edge=32)
        with pytest.raises(ValueError):
            PipelineConfig(policy="other")


class TestTomlLoading:
    def test_full_file(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(TOML)
        cfg, endpoints = load_config(path)
        assert cfg.zoom_scale == 2.0
        assert cfg.target_long_edge == 256
        assert cfg.policy == "union"
        assert cfg.arbitration.tau_base == 0.55
        assert cfg.arbitration.budget == 1152
        assert cfg.score_threshold_a == 0.25
        assert cfg.score_threshold_b == 0.35
        assert cfg.style.trusted_color == (1, 2, 3)
        assert cfg.style.line_width == 5
        assert cfg.style.draw_labels is False
        assert cfg.noise == NoiseConfig(enabled=True, max_iou=0.2)
        assert endpoints.generate_url == "http://example:9000/generate"
        assert endpoints.detect_url_a.endswith("/detect?expert=A")

    def test_env_var_fallback(self, tmp_path, monkeypatch):
        path = tmp_path / "cfg.toml"
        path.write_text("zoom_scale = 3.0\n")
        monkeypatch.setenv(ENV_CONFIG_VAR, str(path))
        cfg, _ = load_config()
        assert cfg.zoom_scale == 3.0

    def test_line_width_zero_means_auto(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[style]\nline_width = 0\n")
        cfg, _ = load_config(path)
        assert cfg.style.line_width is None

import numpy as np

from conftest import make_scene
from energyplan import render
from energyplan.field import combined_field, lane_field, risk_field
from energyplan.scene import GridSpec


def test_empty_scene_shows_only_lanes_and_gt():
    scene = make_scene()
    img = render.render_scene(scene, scale=2)
    assert img.shape == (128, 128, 3) and img.dtype == np.uint8
    colours = {tuple(c) for c in img.reshape(-1, 3)}
    allowed = {render.COLORS[k] for k in ("background", "drivable", "lane", "gt", "ego")}
    assert colours <= allowed
    assert render.COLORS["gt"] in colours and render.COLORS["lane"] in colours


def test_heatmap_endpoints():
    c = render.heat_colors(np.array([0.0, 0.5, 1.0]))
    assert tuple(c[0]) == (10, 10, 40) and tuple(c[-1]) == (255, 255, 255)
    assert np.all(render.heat_colors(np.zeros(4)) == c[0])


def test_pixel_mapping_puts_positive_y_up():
    cv = render.Canvas(GridSpec(10, 10, 1.0, (0.0, 0.0)), scale=1)
    (r_low, _), (r_high, _) = cv.to_pixel(np.array([[0.0, 0.0], [0.0, 9.0]]))
    assert r_high < r_low


def test_ppm_roundtrip(tmp_path):
    scene = make_scene([(10.0, 3.0)])
    img = render.render_scene(scene, combined_field(risk_field(scene), lane_field(scene)), scale=1)
    data = render.write_ppm(tmp_path / "a.ppm", img)
    assert data.startswith(b"P6\n64 64\n255\n")
    assert np.array_equal(render.read_ppm(tmp_path / "a.ppm"), img)
    assert render.COLORS["agent"] in {tuple(c) for c in img.reshape(-1, 3)}


def test_svg_is_deterministic():
    scene = make_scene([(10.0, 3.0)])
    a = render.render_svg(scene)
    assert a == render.render_svg(scene)
    assert a.startswith("<svg") and a.count("<circle") == 1

import pytest

from scenemark import SynthSpec, load_scene, synth_scene

# Small but fully featured scene shared by read-only tests.
SMALL_SPEC = SynthSpec(
    object_count=3,
    points_per_object=400,
    floor_points=2500,
    wall_points=1800,
    n_frames=10,
)


@pytest.fixture(scope="session")
def small_scene():
    return synth_scene(SMALL_SPEC, seed=7)


@pytest.fixture(scope="session")
def scene_dir(small_scene, tmp_path_factory):
    root = tmp_path_factory.mktemp("bundles") / "scene7"
    small_scene.write(root)
    return root


@pytest.fixture(scope="session")
def bundle(scene_dir):
    return load_scene(scene_dir)

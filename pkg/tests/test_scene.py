import numpy as np
import pytest
from numpy.testing import assert_allclose

from conjac.app.scene import BUILTIN_SCENES, SceneError, load_scene, scene_from_dict
from conjac.materials import StableNeoHookean


def base_doc():
    return {
        'name': 'bar',
        'mesh': {'box': {'size_m': [0.1, 0.02, 0.02], 'cells': [5, 1, 1]}},
        'materials': [{'model': 'snh', 'youngs_modulus_pa': 1e4, 'poisson_ratio': 0.4}],
        'fixed_nodes': {'box': {'min_m': [-0.001, -1, -1], 'max_m': [0.001, 1, 1]}},
        'dynamic_nodes': [{'near_m': [0.1, 0.02, 0.02]}],
        'gravity_m_s2': [0, 0, -9.81],
        'steps': 5,
    }


def with_(**changes):
    doc = base_doc()
    doc.update(changes)
    return doc


@pytest.mark.parametrize('name', sorted(p.stem for p in BUILTIN_SCENES.glob('*.yaml')))
def test_shipped_scenes_load(name):
    scene = load_scene(name)
    assert scene.name == name
    assert scene.mesh.n_elements == len(scene.materials)
    assert scene.steps > 0


def test_parsed_fields():
    scene = scene_from_dict(base_doc())
    assert scene.mesh.n_nodes == 24
    assert scene.fixed.size == 4
    assert_allclose(scene.mesh.rest_positions[scene.dynamic], [[0.1, 0.02, 0.02]])
    assert_allclose(scene.gravity, [0, 0, -9.81])
    assert isinstance(scene.materials[0], StableNeoHookean)
    assert scene.solver.h == 5e-3 and scene.solver.beta == 0.5
    assert scene.integrator == 'conjac'


def test_numeric_strings_accepted():
    doc = with_(solver={'h_s': '1.0e-3'})
    assert scene_from_dict(doc).solver.h == 1e-3


def test_layered_materials_and_density():
    doc = with_(materials=[
        {'model': 'snh', 'youngs_modulus_pa': 1e4, 'poisson_ratio': 0.4},
        {'model': 'linear', 'youngs_modulus_pa': 1e5, 'poisson_ratio': 0.3, 'density_kg_m3': 2000,
         'elements': {'box': {'min_m': [0.05, -1, -1], 'max_m': [1, 1, 1]}}},
    ])
    scene = scene_from_dict(doc)
    right = scene.mesh.centroids()[:, 0] >= 0.05
    assert sum(m is scene.materials[0] for m in scene.materials) == (~right).sum()
    assert_allclose(scene.mesh.density[right], 2000.0)


def test_random_dynamic_nodes_follow_seed():
    doc = with_(dynamic_nodes={'random': 3})
    a = scene_from_dict(doc, seed=7).dynamic
    b = scene_from_dict(doc, seed=7).dynamic
    assert np.array_equal(a, b) and a.size == 3
    assert not np.intersect1d(a, scene_from_dict(doc).fixed).size


def test_scripted_rotation_keyframes():
    doc = with_(scripted=[{'nodes': {'box': {'min_m': [0.099, -1, -1], 'max_m': [0.101, 1, 1]}},
                           'keyframes': [{'time_s': 0.0}, {'time_s': 1.0, 'rotation_deg': 90,
                                                                   'rotation_axis': [1, 0, 0]}]}],
                dynamic_nodes=[])
    scene = scene_from_dict(doc)
    g = scene.scripted[0]
    x = scene.mesh.rest_positions
    p = g.positions(x, 1.0)
    assert_allclose(p[:, 0], x[g.nodes, 0])
    assert_allclose(p[:, 1], -x[g.nodes, 2], atol=1e-15)
    assert_allclose(p[:, 2], x[g.nodes, 1], atol=1e-15)
    assert_allclose(g.positions(x, 0.5)[:, 1:], x[g.nodes][:, [1, 2]] @ np.array([[np.cos(np.pi / 4), np.sin(np.pi / 4)], [-np.sin(np.pi / 4), np.cos(np.pi / 4)]]), atol=1e-15)
    assert np.all(np.isin(g.nodes, scene.fixed))


BAD = [
    ('mesh', {}),
    ('mesh', {'box': {'size_m': [1, 1, 1], 'cells': [1, 0, 1]}}),
    ('materials', []),
    ('materials', [{'model': 'rubber', 'youngs_modulus_pa': 1, 'poisson_ratio': 0.3}]),
    ('materials', [{'model': 'snh', 'youngs_modulus_pa': -1, 'poisson_ratio': 0.3}]),
    ('materials', [{'model': 'snh+astvk', 'youngs_modulus_pa': 1e4, 'poisson_ratio': 0.3}]),
    ('dynamic_nodes', [0]),
    ('dynamic_nodes', [999]),
    ('fixed_nodes', {'box': {'min_m': [5, 5, 5], 'max_m': [6, 6, 6]}}),
    ('gravity_m_s2', [0, 1]),
    ('solver', {'h_s': 0}),
    ('solver', {'beta': -1}),
    ('solver', {'h_s': 'fast'}),
    ('integrator', 'rk4'),
    ('integrator', 'conjac+adaptive'),
    ('steps', 2.5),
    ('forces', [{'nodes': [1], 'force_n': [0, 0, 1], 'start_s': 1.0, 'end_s': 0.5}]),
    ('cuts', [{'time_s': 0.1}]),
    ('contact', {'stiffness_n_per_m': -5}),
    ('adaptivity', {'representative': [0]}),
]


@pytest.mark.parametrize('key,value', BAD, ids=[f'{k}-{i}' for i, (k, _) in enumerate(BAD)])
def test_invalid_scene_raises_scene_error(key, value):
    doc = with_(**{key: value})
    with pytest.raises(SceneError):
        scene_from_dict(doc)


def test_error_names_the_field():
    with pytest.raises(SceneError, match=r'solver\.h_s'):
        scene_from_dict(with_(solver={'h_s': -1}))


def test_missing_file_and_bad_yaml(tmp_path):
    with pytest.raises(SceneError):
        load_scene(tmp_path / 'nope.yaml')
    bad = tmp_path / 'bad.yaml'
    bad.write_text('mesh: [unclosed\n')
    with pytest.raises(SceneError):
        load_scene(bad)


def test_mesh_files_relative_to_scene(tmp_path):
    (tmp_path / 'a.node').write_text('4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n')
    (tmp_path / 'a.ele').write_text('1 4 0\n1 1 2 3 4\n')
    doc = with_(mesh={'node_file': 'a.node', 'ele_file': 'a.ele'}, fixed_nodes=[0, 1, 2], dynamic_nodes=[3])
    import yaml
    (tmp_path / 's.yaml').write_text(yaml.safe_dump(doc))
    scene = load_scene(tmp_path / 's.yaml')
    assert scene.mesh.n_nodes == 4

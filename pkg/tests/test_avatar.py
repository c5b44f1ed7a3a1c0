import numpy as np
import pytest

from deskavatar.avatar import (
    BodyTemplate,
    OffsetNet,
    PoseParams,
    deformed_positions,
    fk_backward,
    forward_kinematics,
    laplacian,
    laplacian_loss,
    posed_joints,
    skin_vertices,
)
from deskavatar.body import build_capsule_template, load_template, save_template
from deskavatar.rotations import axis_angle_to_matrix

from conftest import central_diff, rel_error


def chain_template(n_joints=3, n_verts=5, seed=0):
    """Minimal straight-chain body for unit tests."""
    rng = np.random.default_rng(seed)
    joints = np.zeros((n_joints, 3))
    joints[:, 1] = np.arange(n_joints) * 0.5
    parents = np.arange(n_joints) - 1
    verts = rng.uniform(-0.5, 0.5, (n_verts, 3))
    w = rng.uniform(0.1, 1.0, (n_verts, n_joints))
    w /= w.sum(axis=1, keepdims=True)
    edges = np.array([[i, (i + 1) % n_verts] for i in range(n_verts)])
    faces = np.zeros((0, 3), dtype=int)
    return BodyTemplate(verts, edges, faces, joints, parents, w)


class TestForwardKinematics:
    def test_rest_pose_identity(self):
        t = chain_template()
        fk = forward_kinematics(t, PoseParams.zero(t.n_joints))
        assert np.allclose(fk.rotations, np.eye(3)[None], atol=1e-12)
        assert np.allclose(fk.translations, 0.0, atol=1e-12)

    def test_root_rotation_propagates(self):
        t = chain_template()
        pose = PoseParams.zero(t.n_joints)
        pose.joint_rotations[0] = [0.3, -0.2, 0.5]
        R = axis_angle_to_matrix(pose.joint_rotations[0])
        fk = forward_kinematics(t, pose)
        for j in range(t.n_joints):
            assert np.allclose(fk.rotations[j], R, atol=1e-12)

    def test_three_joint_chain_matches_matrix_oracle(self, rng):
        t = chain_template()
        pose = PoseParams(rng.normal(0, 0.5, (3, 3)), rng.normal(0, 0.3, 3),
                          np.zeros(10))
        fk = forward_kinematics(t, pose)

        def affine(R, c, extra=None):
            M = np.eye(4)
            M[:3, :3] = R
            M[:3, 3] = c - R @ c
            if extra is not None:
                M[:3, 3] += extra
            return M

        Rl = axis_angle_to_matrix(pose.joint_rotations)
        M0 = affine(Rl[0], t.joints[0], pose.root_translation)
        M1 = M0 @ affine(Rl[1], t.joints[1])
        M2 = M1 @ affine(Rl[2], t.joints[2])
        for j, M in enumerate((M0, M1, M2)):
            assert np.abs(fk.rotations[j] - M[:3, :3]).max() < 1e-9
            assert np.abs(fk.translations[j] - M[:3, 3]).max() < 1e-9

    def test_cyclic_parents_rejected(self):
        t = chain_template()
        t.parents = np.array([-1, 2, 1])
        with pytest.raises(ValueError):
            forward_kinematics(t, PoseParams.zero(3))

    def test_fk_gradients_fd(self, rng):
        t = chain_template(n_joints=4)
        t.joint_shape_dirs = rng.normal(0, 0.05, (4, 3, 10))
        pose0 = PoseParams(rng.normal(0, 0.4, (4, 3)), rng.normal(0, 0.2, 3),
                           rng.normal(0, 0.5, 10))
        u_j = rng.normal(size=(4, 3))  # adjoint on posed joints

        def pack(p):
            return np.concatenate([p.joint_rotations.ravel(), p.root_translation, p.shape])

        def unpack(x):
            return PoseParams(x[:12].reshape(4, 3), x[12:15], x[15:])

        def loss(x):
            fk = forward_kinematics(t, unpack(x))
            return float(np.sum(posed_joints(fk) * u_j))

        fk = forward_kinematics(t, pose0)
        gR = np.einsum("ja,jb->jab", u_j, fk.rest)
        gt = u_j.copy()
        g_rest = np.einsum("jab,ja->jb", fk.rotations, u_j)
        g_aa, g_root, g_shape = fk_backward(t, pose0, fk, gR, gt, g_rest)
        analytic = np.concatenate([g_aa.ravel(), g_root, g_shape])
        fd = central_diff(loss, pack(pose0), step=1e-5)
        assert rel_error(analytic, fd) < 1e-5


class TestSkinning:
    def test_identity_transforms(self):
        t = chain_template()
        fk = forward_kinematics(t, PoseParams.zero(t.n_joints))
        assert np.allclose(skin_vertices(t, fk), t.canonical_vertices, atol=1e-12)

    def test_single_joint_translation(self):
        t = chain_template(n_joints=1, n_verts=4)
        pose = PoseParams.zero(1)
        pose.root_translation[:] = [0.2, -0.1, 0.4]
        fk = forward_kinematics(t, pose)
        assert np.allclose(skin_vertices(t, fk), t.canonical_vertices + pose.root_translation)

    def test_half_weights_half_shift(self):
        t = chain_template(n_joints=2, n_verts=3)
        t.skin_weights = np.full((3, 2), 0.5)
        pose = PoseParams.zero(2)
        pose.root_translation[:] = [1.0, 0.0, 0.0]
        fk = forward_kinematics(t, pose)
        # joint 0 translates by t (root), joint 1 follows rigidly: both move,
        # so build the half case differently: rotate nothing, translate root only
        # affects both joints equally; instead use distinct joint transforms via
        # a custom fk-like structure.
        from deskavatar.avatar import FKResult
        fk = FKResult(
            rotations=np.stack([np.eye(3), np.eye(3)]),
            translations=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
            local_rotations=np.stack([np.eye(3), np.eye(3)]),
            local_translations=np.zeros((2, 3)),
            rest=t.joints,
        )
        out = skin_vertices(t, fk)
        assert np.allclose(out, t.canonical_vertices + [0.5, 0.0, 0.0])

    def test_rigid_equivariance(self, rng):
        t = chain_template()
        pose = PoseParams(rng.normal(0, 0.4, (3, 3)), rng.normal(0, 0.2, 3), np.zeros(10))
        fk = forward_kinematics(t, pose)
        v1 = skin_vertices(t, fk)
        R = axis_angle_to_matrix(rng.normal(0, 0.7, 3))
        s = rng.normal(0, 0.5, 3)
        fk2 = forward_kinematics(t, pose)
        fk2.rotations = np.einsum("ab,jbc->jac", R, fk.rotations)
        fk2.translations = fk.translations @ R.T + s
        v2 = skin_vertices(t, fk2)
        assert np.abs(v2 - (v1 @ R.T + s)).max() < 1e-12


class TestOffsetNet:
    def test_zero_net_is_skinning(self, rng):
        t = chain_template()
        net = OffsetNet.init(t.n_joints, t.n_vertices, seed=3)
        net.w3[:] = 0.0
        net.b3[:] = 0.0
        pose = PoseParams(rng.normal(0, 0.3, (3, 3)), np.zeros(3), np.zeros(10))
        fk = forward_kinematics(t, pose)
        assert np.allclose(deformed_positions(t, pose, net), skin_vertices(t, fk))

    def test_zero_pose_zero_net_is_canonical(self):
        t = chain_template()
        net = OffsetNet.init(t.n_joints, t.n_vertices, seed=3)
        net.w3[:] = 0.0
        net.b3[:] = 0.0
        out = deformed_positions(t, PoseParams.zero(3), net)
        assert np.allclose(out, t.canonical_vertices)

    def test_weight_gradients_fd(self, rng):
        t = chain_template()
        net = OffsetNet.init(t.n_joints, t.n_vertices, seed=5)
        pose = PoseParams(rng.normal(0, 0.4, (3, 3)), np.zeros(3), np.zeros(10))
        u = rng.normal(size=(t.n_vertices, 3))
        offsets, cache = net.forward_cache(pose.joint_rotations)
        analytic = net.backward(cache, u)

        flat0 = net.to_flat()

        def loss(x):
            net.from_flat(x)
            val = float(np.sum(deformed_positions(t, pose, net) * u))
            net.from_flat(flat0)
            return val

        fd = central_diff(loss, flat0, step=1e-4)
        assert rel_error(analytic, fd) < 1e-3

    def test_flat_roundtrip(self, rng):
        net = OffsetNet.init(4, 10, seed=1)
        flat = net.to_flat()
        net2 = OffsetNet.init(4, 10, seed=2)
        net2.from_flat(flat)
        assert np.array_equal(net2.to_flat(), flat)


class TestLaplacian:
    def test_constant_vertices_zero(self):
        edges = np.array([[0, 1], [1, 2], [2, 0]])
        v = np.ones((3, 3)) * 0.7
        assert np.allclose(laplacian(v, edges), 0.0)

    def test_ring_is_radial(self):
        n = 8
        ang = 2 * np.pi * np.arange(n) / n
        v = np.stack([np.cos(ang), np.sin(ang), np.zeros(n)], axis=1)
        edges = np.array([[i, (i + 1) % n] for i in range(n)])
        lap = laplacian(v, edges)
        mags = np.linalg.norm(lap, axis=1)
        assert np.allclose(mags, mags[0])
        radial = lap / mags[:, None]
        assert np.allclose(radial, v)

    def test_matches_dense_matrix_oracle(self, rng):
        n = 12
        v = rng.normal(size=(n, 3))
        edges = [[i, (i + 1) % n] for i in range(n)] + [[0, 5], [2, 8], [3, 10]]
        edges = np.array(edges)
        L = np.eye(n)
        deg = np.zeros(n)
        for a, b in edges:
            deg[a] += 1
            deg[b] += 1
        for a, b in edges:
            L[a, b] -= 1.0 / deg[a]
            L[b, a] -= 1.0 / deg[b]
        assert np.abs(laplacian(v, edges) - L @ v).max() < 1e-9

    def test_isolated_vertex_rejected(self):
        with pytest.raises(ValueError):
            laplacian(np.zeros((3, 3)), np.array([[0, 1]]))

    def test_loss_zero_cases(self, rng):
        n = 10
        v = rng.normal(size=(n, 3))
        edges = np.array([[i, (i + 1) % n] for i in range(n)])
        assert laplacian_loss(v, v, edges) == 0.0
        assert laplacian_loss(v, v + [1.0, -2.0, 0.5], edges) == pytest.approx(0.0, abs=1e-18)

    def test_loss_scaling(self, rng):
        n = 10
        v = rng.normal(size=(n, 3))
        edges = np.array([[i, (i + 1) % n] for i in range(n)])
        base = float(np.sum(laplacian(v, edges) ** 2))
        assert laplacian_loss(v, 2.0 * v, edges) == pytest.approx(base, rel=1e-12)


class TestCapsuleTemplate:
    def test_build_valid(self):
        t = build_capsule_template()
        t.validate()
        assert 500 <= t.n_vertices <= 2000
        assert t.n_joints == 16

    def test_shape_dirs_are_exact(self):
        t = build_capsule_template()
        rng = np.random.default_rng(0)
        beta = rng.normal(0, 0.5, 10)
        from deskavatar.body import _build_surface
        v_direct, _, j_direct, _, _ = _build_surface(beta)
        assert np.abs(t.rest_joints(beta) - j_direct).max() < 1e-12
        assert np.abs(t.shaped_vertices(beta) - v_direct).max() < 1e-12

    def test_mesh_roundtrip(self, tmp_path):
        t = build_capsule_template()
        path = tmp_path / "body.mesh"
        save_template(path, t)
        t2 = load_template(path)
        assert np.array_equal(t.canonical_vertices, t2.canonical_vertices)
        assert np.array_equal(t.edges, t2.edges)
        assert np.array_equal(t.faces, t2.faces)
        assert np.array_equal(t.joints, t2.joints)
        assert np.array_equal(t.parents, t2.parents)
        assert np.array_equal(t.skin_weights, t2.skin_weights)
        assert np.array_equal(t.joint_shape_dirs, t2.joint_shape_dirs)
        assert np.array_equal(t.vertex_shape_dirs, t2.vertex_shape_dirs)

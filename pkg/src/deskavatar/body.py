"""Procedural capsule-human template: a reduced 16-joint parametric body.

The generator is affine in the 10 shape coefficients (lengths, radii, and
widths scale linearly), so the shape-direction tensors are exact and are
built by differencing the generator at the coordinate unit vectors.

Shape coefficient meaning:
  0 height, 1 torso radius, 2 arm length, 3 leg length, 4 head size,
  5 shoulder width, 6 arm radius, 7 leg radius, 8 torso length, 9 hip width.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .avatar import N_SHAPE_COEFFS, BodyTemplate

JOINT_NAMES = (
    "pelvis", "spine", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)
PARENTS = np.array([-1, 0, 1, 2, 2, 4, 5, 2, 7, 8, 0, 10, 11, 0, 13, 14])
N_JOINTS = len(JOINT_NAMES)

J = {name: i for i, name in enumerate(JOINT_NAMES)}


def _joint_positions(beta: np.ndarray) -> np.ndarray:
    # every measurement is affine in beta so the shape directions are exact
    torso = 1.0 + 0.12 * beta[0] + 0.12 * beta[8]
    height = 1.0 + 0.12 * beta[0]
    arm_len = 1.0 + 0.15 * beta[2]
    leg_len = 1.0 + 0.12 * beta[0] + 0.15 * beta[3]
    shoulder_w = 0.05 * beta[5]
    hip_w = 0.04 * beta[9]
    head_off = 0.03 * beta[4]

    joints = np.zeros((N_JOINTS, 3))
    joints[J["spine"]] = [0.0, 0.22 * torso, 0.0]
    joints[J["neck"]] = [0.0, 0.48 * torso, 0.0]
    neck_y = joints[J["neck"], 1]
    joints[J["head"]] = [0.0, neck_y + 0.14 * height + head_off, 0.0]
    for sx, side in ((1.0, "l"), (-1.0, "r")):
        sh_x = sx * (0.16 + shoulder_w)
        joints[J[f"{side}_shoulder"]] = [sh_x, neck_y - 0.04, 0.0]
        joints[J[f"{side}_elbow"]] = [sh_x + sx * 0.26 * arm_len, neck_y - 0.04, 0.0]
        joints[J[f"{side}_wrist"]] = [sh_x + sx * 0.50 * arm_len, neck_y - 0.04, 0.0]
        hip_x = sx * (0.09 + hip_w)
        hip_y = -0.06 * height
        joints[J[f"{side}_hip"]] = [hip_x, hip_y, 0.0]
        joints[J[f"{side}_knee"]] = [hip_x, hip_y - 0.40 * leg_len, 0.0]
        joints[J[f"{side}_ankle"]] = [hip_x, hip_y - 0.78 * leg_len, 0.0]
    return joints


def _bone_specs(beta: np.ndarray):
    torso_r = 0.125 * (1.0 + 0.25 * beta[1])
    arm_r = 0.040 * (1.0 + 0.30 * beta[6])
    leg_r = 0.060 * (1.0 + 0.30 * beta[7])
    head_r = 0.085 * (1.0 + 0.20 * beta[4])
    # (start joint, end joint, radius, rings, points/ring, extension past end,
    #  align) where align="y" snaps the start height to the end joint so the
    # bone stays axis-aligned (keeps the generator affine in beta)
    specs = [
        ("pelvis", "spine", torso_r, 4, 16, 0.0, None),
        ("spine", "neck", torso_r * 0.92, 4, 16, 0.0, None),
        ("neck", "head", 0.045, 2, 10, 0.0, None),
    ]
    for side in ("l", "r"):
        specs += [
            ("neck", f"{side}_shoulder", 0.042, 2, 10, 0.0, "y"),
            (f"{side}_shoulder", f"{side}_elbow", arm_r, 6, 12, 0.0, None),
            (f"{side}_elbow", f"{side}_wrist", arm_r * 0.88, 6, 12, 0.07, None),
            ("pelvis", f"{side}_hip", 0.058, 2, 10, 0.0, "y"),
            (f"{side}_hip", f"{side}_knee", leg_r, 6, 12, 0.0, None),
            (f"{side}_knee", f"{side}_ankle", leg_r * 0.80, 6, 12, 0.06, None),
        ]
    return specs, head_r


def _ring_frame(direction: np.ndarray):
    ref = np.array([1.0, 0.0, 0.0])
    if abs(direction @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    n1 = np.cross(direction, ref)
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(direction, n1)
    return n1, n2


def _build_surface(beta: np.ndarray):
    """Vertices, per-vertex (joint_a, joint_b, blend) skinning keys, edges, faces."""
    joints = _joint_positions(beta)
    specs, head_r = _bone_specs(beta)
    verts: list[np.ndarray] = []
    skin_keys: list[tuple[int, int, float]] = []
    edges: list[tuple[int, int]] = []
    faces: list[tuple[int, int, int]] = []

    def add_ring_strip(base_count_before, n_rings, n_pts):
        # ring-to-ring quads, split into triangles; also ring and rung edges
        for r in range(n_rings):
            for k in range(n_pts):
                a = base_count_before + r * n_pts + k
                b = base_count_before + r * n_pts + (k + 1) % n_pts
                edges.append((a, b))
                if r + 1 < n_rings:
                    c = base_count_before + (r + 1) * n_pts + k
                    d = base_count_before + (r + 1) * n_pts + (k + 1) % n_pts
                    edges.append((a, c))
                    faces.append((a, b, c))
                    faces.append((b, d, c))

    for name_a, name_b, radius, n_rings, n_pts, ext, align in specs:
        a = joints[J[name_a]].copy()
        b = joints[J[name_b]]
        if align == "y":
            a[1] = b[1]
        seg = b - a
        length = np.linalg.norm(seg)
        d = seg / length
        n1, n2 = _ring_frame(d)
        base = len(verts)
        u_max = 1.0 + ext / length
        for r in range(n_rings):
            u = u_max * r / (n_rings - 1) if n_rings > 1 else 0.5
            center = a + u * seg
            blend = 0.5 * np.clip((u - 0.75) / 0.25, 0.0, 1.0)
            for k in range(n_pts):
                phi = 2.0 * np.pi * k / n_pts
                verts.append(center + radius * (np.cos(phi) * n1 + np.sin(phi) * n2))
                skin_keys.append((J[name_a], J[name_b], min(blend, 0.5)))
        add_ring_strip(base, n_rings, n_pts)

    # head: latitude rings of a sphere around a center above the head joint
    head_c = joints[J["head"]] + np.array([0.0, 0.04, 0.0])
    n_lat, n_pts = 5, 12
    base = len(verts)
    for r in range(n_lat):
        lat = np.pi * (r + 0.5) / n_lat - np.pi / 2.0
        ring_r = head_r * np.cos(lat)
        y = head_r * np.sin(lat)
        for k in range(n_pts):
            phi = 2.0 * np.pi * k / n_pts
            verts.append(head_c + np.array([ring_r * np.cos(phi), y, ring_r * np.sin(phi)]))
            skin_keys.append((J["head"], J["head"], 0.0))
    add_ring_strip(base, n_lat, n_pts)

    return np.array(verts), skin_keys, joints, np.array(edges), np.array(faces)


def build_capsule_template() -> BodyTemplate:
    """The reduced parametric body with exact linear shape directions."""
    beta0 = np.zeros(N_SHAPE_COEFFS)
    verts, skin_keys, joints, edges, faces = _build_surface(beta0)
    n = len(verts)
    weights = np.zeros((n, N_JOINTS))
    for i, (ja, jb, blend) in enumerate(skin_keys):
        weights[i, ja] += 1.0 - blend
        weights[i, jb] += blend

    joint_dirs = np.zeros((N_JOINTS, 3, N_SHAPE_COEFFS))
    vertex_dirs = np.zeros((n, 3, N_SHAPE_COEFFS))
    for k in range(N_SHAPE_COEFFS):
        ek = np.zeros(N_SHAPE_COEFFS)
        ek[k] = 1.0
        v_k, _, j_k, _, _ = _build_surface(ek)
        joint_dirs[:, :, k] = j_k - joints
        vertex_dirs[:, :, k] = v_k - verts

    template = BodyTemplate(verts, edges, faces, joints, PARENTS, weights,
                            joint_dirs, vertex_dirs)
    template.validate()
    return template


def save_template(path, template: BodyTemplate) -> None:
    """Text mesh format: counts header, then v/e/f/j/w lines and nonzero
    jd/vd shape-direction lines (see load_template)."""
    lines = ["# deskavatar body template v1"]
    t = template
    lines.append(f"counts {t.n_vertices} {len(t.edges)} {len(t.faces)} {t.n_joints} {N_SHAPE_COEFFS}")
    for v in t.canonical_vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for e in t.edges:
        lines.append(f"e {e[0]} {e[1]}")
    for f in t.faces:
        lines.append(f"f {f[0]} {f[1]} {f[2]}")
    for j, (pos, par) in enumerate(zip(t.joints, t.parents)):
        lines.append(f"j {float(pos[0])!r} {float(pos[1])!r} {float(pos[2])!r} {par}")
    for row in t.skin_weights:
        lines.append("w " + " ".join(repr(float(x)) for x in row))
    for j in range(t.n_joints):
        for k in range(N_SHAPE_COEFFS):
            d = t.joint_shape_dirs[j, :, k]
            if np.any(d != 0.0):
                lines.append(f"jd {j} {k} {float(d[0])!r} {float(d[1])!r} {float(d[2])!r}")
    for i in range(t.n_vertices):
        for k in range(N_SHAPE_COEFFS):
            d = t.vertex_shape_dirs[i, :, k]
            if np.any(d != 0.0):
                lines.append(f"vd {i} {k} {float(d[0])!r} {float(d[1])!r} {float(d[2])!r}")
    Path(str(path)).write_text("\n".join(lines) + "\n")


def load_template(path) -> BodyTemplate:
    verts, edges, faces, joints, parents, weights = [], [], [], [], [], []
    joint_dirs = vertex_dirs = None
    for line in Path(str(path)).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tag, *rest = line.split()
        if tag == "counts":
            nv, ne, nf, nj, nk = (int(x) for x in rest)
            joint_dirs = np.zeros((nj, 3, nk))
            vertex_dirs = np.zeros((nv, 3, nk))
        elif tag == "v":
            verts.append([float(x) for x in rest])
        elif tag == "e":
            edges.append([int(x) for x in rest])
        elif tag == "f":
            faces.append([int(x) for x in rest])
        elif tag == "j":
            joints.append([float(x) for x in rest[:3]])
            parents.append(int(rest[3]))
        elif tag == "w":
            weights.append([float(x) for x in rest])
        elif tag == "jd":
            j, k = int(rest[0]), int(rest[1])
            joint_dirs[j, :, k] = [float(x) for x in rest[2:5]]
        elif tag == "vd":
            i, k = int(rest[0]), int(rest[1])
            vertex_dirs[i, :, k] = [float(x) for x in rest[2:5]]
        else:
            raise ValueError(f"unknown template line tag: {tag}")
    template = BodyTemplate(np.array(verts), np.array(edges, dtype=int),
                            np.array(faces, dtype=int), np.array(joints),
                            np.array(parents, dtype=int), np.array(weights),
                            joint_dirs, vertex_dirs)
    template.validate()
    return template

"""Synthetic street scenarios for vehicle-to-vehicle prediction runs.

The generated layout is two parallel streets separated by a segmented row of
buildings, with continuous-but-gapped building rows on the outside of each
street.  The transmitter and receiver vehicles drive along the two streets,
so the line of sight and the reflection/diffraction geometry repeatedly cut
across the middle-row gaps: every gap boundary is a birth/death site for
multipath components.  All facades are vertical, both antennas share one
height, and facade rows are thin screens whose vertical ends carry
half-plane diffraction edges.
"""

from __future__ import annotations

import numpy as np

from .motion import Motion, MotionState
from .scene import Edge, Facet, Material, Scene

CONCRETE = Material(rel_permittivity=5.31, conductivity=0.0326)
GLASS = Material(rel_permittivity=6.27, conductivity=0.0367,
                 attenuation_alpha=1.5, transparent=True)


def _facade(fid: str, x: float, y0: float, y1: float, height: float,
            normal_toward: float, material: Material, thickness: float = 0.2,
            declare_edges: bool = True) -> tuple[Facet, list[Edge]]:
    """Vertical rectangular facade at fixed x with outward normal +-x."""
    if normal_toward > 0:
        verts = [[x, y0, 0.0], [x, y1, 0.0], [x, y1, height], [x, y0, height]]
    else:
        verts = [[x, y1, 0.0], [x, y0, 0.0], [x, y0, height], [x, y1, height]]
    facet = Facet(id=fid, vertices=np.asarray(verts), material=material,
                  thickness=thickness)
    edges = []
    if declare_edges:
        for tag, y in (("a", y0), ("b", y1)):
            edges.append(Edge(
                id=f"{fid}_e{tag}",
                endpoints=np.array([[x, y, 0.0], [x, y, height]]),
                adjacent_facets=(fid, fid),
                exterior_wedge_angle=2.0 * np.pi,
            ))
    return facet, edges


def _segment_row(rng, prefix: str, x: float, normal_toward: float, y_lo: float,
                 y_hi: float, n_segments: int, height: float,
                 building_span=(7.0, 12.0), gap_span=(3.5, 6.0),
                 transparent_index: int | None = None,
                 declare_edges: bool = True):
    """Row of n_segments facades with jittered lengths and gaps.

    With gap_span=(0, 0) the segments abut flush: the row acts as one
    continuous wall whose reflection signature changes cleanly at each
    junction.
    """
    facets, edges = [], []
    span = y_hi - y_lo
    mean_b = 0.5 * (building_span[0] + building_span[1])
    mean_g = 0.5 * (gap_span[0] + gap_span[1])
    need = n_segments * mean_b + (n_segments - 1) * mean_g
    scale = span / need if need > 0 else 1.0
    y = y_lo
    for i in range(n_segments):
        b = rng.uniform(*building_span) * scale
        material = GLASS if i == transparent_index else CONCRETE
        thickness = 0.1 if i == transparent_index else 0.2
        f, es = _facade(f"{prefix}{i}", x, y, y + b, height, normal_toward,
                        material, thickness, declare_edges)
        facets.append(f)
        edges.extend(es)
        y += b
        if i < n_segments - 1 and gap_span[1] > 0.0:
            y += rng.uniform(*gap_span) * scale
    return facets, edges


def generate_v2v_scenario(length_m: float = 100.0, street_width_m: float = 12.0,
                          building_segments: int = 4,
                          speeds: tuple[float, float] = (10.0, 10.0),
                          *, seed: int = 0, headway_m: float = 14.0,
                          block_depth_m: float = 6.0,
                          facade_height_m: float = 10.0,
                          antenna_height_m: float = 1.5,
                          transparent_segments: int = 1,
                          frequency_hz: float = 6.0e9,
                          tx_power_dbm: float = 30.0) -> Scene:
    """Build the default vehicle-to-vehicle prediction scene.

    Two parallel streets separated by a row of city blocks with cross-street
    gaps; the vehicles drive one street each.  Block and gap sizes are a few
    window-sweeps long, so multipath births and deaths persist across
    reference passes instead of flickering inside a single window.
    building_segments counts the blocks; each block has a facade on both
    streets and diffraction edges on its corners.  The outer sides of both
    streets carry building rows, backed by a second-row backdrop that adds
    realistic enumeration load.  With building_segments=0 the scene
    degenerates to two vehicles in free space.
    """
    if length_m <= 0 or street_width_m <= 0:
        raise ValueError("route length and street width must be positive")
    if building_segments < 0:
        raise ValueError("building_segments must be >= 0")
    rng = np.random.default_rng(seed)
    margin = 20.0
    y_lo, y_hi = -margin, length_m + margin
    facets: list[Facet] = []
    edges: list[Edge] = []
    if building_segments > 0:
        # middle blocks keep their absolute size: blocks and cross streets
        # are both longer than one window sweep, so the paths they gate
        # persist across reference passes
        t_idx = building_segments // 2 if transparent_segments > 0 else None
        y = y_lo
        i = 0
        while i < building_segments and y < y_hi:
            b = rng.uniform(17.0, 25.0)
            if i == t_idx:
                # glass pavilion: a single transparent screen, no back facade
                f, es = _facade(f"mid{i}", 0.0, y, y + b, facade_height_m,
                                -1.0, GLASS, thickness=0.1)
                facets.append(f)
                edges.extend(es)
            else:
                front, es_f = _facade(f"mid{i}", 0.0, y, y + b, facade_height_m,
                                      -1.0, CONCRETE)
                back, es_b = _facade(f"mid{i}b", block_depth_m, y, y + b,
                                     facade_height_m, +1.0, CONCRETE)
                facets.extend([front, back])
                edges.extend(es_f + es_b)
            y += b + rng.uniform(13.0, 17.0)
            i += 1
        # outer walls: one continuous facade per street, so outer reflections
        # are gated only by the middle-row gaps
        x_left = -street_width_m
        x_right = block_depth_m + street_width_m
        span = np.array([[0.0, y_lo, 0.0], [0.0, y_hi, 0.0],
                         [0.0, y_hi, facade_height_m], [0.0, y_lo, facade_height_m]])
        facets.append(Facet(id="left_wall", vertices=span + [x_left, 0.0, 0.0],
                            material=CONCRETE))
        facets.append(Facet(id="right_wall",
                            vertices=span[::-1] + [x_right, 0.0, 0.0],
                            material=CONCRETE))
        # backdrop blocks behind the outer walls: fully shadowed, they only
        # contribute realistic enumeration load to the full tracer
        for row, (x, toward) in enumerate(((x_left - 6.0, +1.0),
                                           (x_left - 12.0, +1.0),
                                           (x_left - 18.0, +1.0),
                                           (x_right + 6.0, -1.0),
                                           (x_right + 12.0, -1.0),
                                           (x_right + 18.0, -1.0))):
            bf, _ = _segment_row(rng, f"bk{row}_", x, toward, y_lo, y_hi,
                                 2 * building_segments, facade_height_m,
                                 building_span=(7.0, 10.0), gap_span=(0.0, 0.0),
                                 declare_edges=False)
            facets.extend(bf)
    h = antenna_height_m
    tx_motion = Motion((MotionState(r0=np.array([-street_width_m / 2.0, 0.0, h]),
                                    v0=np.array([0.0, speeds[0], 0.0])),))
    rx_motion = Motion((MotionState(
        r0=np.array([block_depth_m + street_width_m / 2.0, headway_m, h]),
        v0=np.array([0.0, speeds[1], 0.0])),))
    return Scene(facets=tuple(facets), edges=tuple(edges),
                 tx_motion=tx_motion, rx_motion=rx_motion,
                 frequency=frequency_hz, tx_power_dbm=tx_power_dbm)


def random_scene(seed: int, n_facets: int = 5, with_edges: bool = True,
                 moving: bool = True) -> Scene:
    """Small randomized scene for property checks.

    Vertical rectangular screens with arbitrary azimuth, equal-height
    transceivers with random horizontal motion, occasionally a transparent
    screen.  The all-vertical geometry keeps the vertical launch
    polarization an eigenstate of every interaction.
    """
    rng = np.random.default_rng(seed)
    h = rng.uniform(1.0, 2.5)
    height = rng.uniform(4.0, 8.0)
    facets: list[Facet] = []
    edges: list[Edge] = []
    for i in range(n_facets):
        cx, cy = rng.uniform(-25.0, 25.0, size=2)
        az = rng.uniform(0.0, np.pi)
        half = rng.uniform(2.0, 8.0)
        d = np.array([np.cos(az), np.sin(az), 0.0])
        a = np.array([cx, cy, 0.0]) - half * d
        b = np.array([cx, cy, 0.0]) + half * d
        verts = np.array([a, b, b + [0, 0, height], a + [0, 0, height]])
        transparent = rng.random() < 0.2
        material = (Material(rel_permittivity=4.0, conductivity=0.01,
                             attenuation_alpha=2.0, transparent=True)
                    if transparent else
                    Material(rel_permittivity=rng.uniform(2.0, 9.0),
                             conductivity=rng.uniform(0.0, 0.1)))
        motion = Motion.stationary(np.zeros(3))
        if moving and rng.random() < 0.5:
            motion = Motion((MotionState(
                r0=np.zeros(3),
                v0=np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0]),
            ),))
        facets.append(Facet(id=f"s{i}", vertices=verts, material=material,
                            motion=motion))
        if with_edges and rng.random() < 0.6:
            endpoints = np.array([a, a + [0, 0, height]])
            edges.append(Edge(id=f"s{i}_edge", endpoints=endpoints,
                              adjacent_facets=(f"s{i}", f"s{i}"),
                              exterior_wedge_angle=2.0 * np.pi))

    def random_motion():
        r0 = np.array([rng.uniform(-30, 30), rng.uniform(-30, 30), h])
        v0 = np.array([rng.uniform(-8, 8), rng.uniform(-8, 8), 0.0])
        a0 = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0])
        return Motion((MotionState(r0=r0, v0=v0, a0=a0),))

    tx = random_motion()
    rx = random_motion()
    while np.linalg.norm(tx.position(0.0) - rx.position(0.0)) < 2.0:
        rx = random_motion()
    return Scene(facets=tuple(facets), edges=tuple(edges), tx_motion=tx,
                 rx_motion=rx, frequency=rng.choice([2.4e9, 6.0e9, 28.0e9]),
                 tx_power_dbm=30.0)

import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from shapely.geometry import box

sys.path.insert(0, str(Path(__file__).parent))

from chppi.access import HealthProvider, StreetGraph  # noqa: E402

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _RESULTS[n] = (title, rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok = _RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {title}")


@pytest.fixture(scope="session")
def toy_city():
    """8x8 street grid at 100 m, plus an unreachable 3x3 island east of a river.

    Eleven posts sit on the island so that, for blocks on the eastern edge of
    the mainland, all ten Euclidean-nearest posts are unreachable.
    """
    nodes, edges = {}, []
    for i in range(8):
        for j in range(8):
            nodes[f"m{i}{j}"] = (100.0 * i, 100.0 * j)
            if i:
                edges.append((f"m{i-1}{j}", f"m{i}{j}", 100.0 + 3 * j))
            if j:
                edges.append((f"m{i}{j-1}", f"m{i}{j}", 100.0 + 2 * i))
    for i in range(3):
        for j in range(3):
            nodes[f"i{i}{j}"] = (850.0 + 50 * i, 300.0 + 50 * j)
            if i:
                edges.append((f"i{i-1}{j}", f"i{i}{j}", 50.0))
            if j:
                edges.append((f"i{i}{j-1}", f"i{i}{j}", 50.0))
    edges.append(("m00", "m01", 150.0))          # parallel, longer: must be ignored
    graph = StreetGraph(nodes, edges)
    providers = [HealthProvider(f"post_i{k:02d}", 850.0 + 9 * k, 340.0 + 7 * (k % 3), "post") for k in range(11)]
    providers += [HealthProvider(f"post_m{k}", x, y, "post")
                  for k, (x, y) in enumerate([(20, 30), (350, 620), (640, 80), (410, 410)])]
    providers += [HealthProvider("ctr_a", 130, 260, "center"), HealthProvider("ctr_b", 560, 540, "center"),
                  HealthProvider("ctr_c", 690, 310, "center")]
    providers += [HealthProvider("hosp_a", 300, 300, "hospital"), HealthProvider("hosp_i", 940, 400, "hospital")]
    blocks = {}
    for i in range(7):
        for j in range(7):
            blocks[f"t{i}{j}"] = box(100 * i + 5, 100 * j + 5, 100 * i + 95, 100 * j + 95)
    blocks["east"] = box(702, 320, 745, 380)
    return graph, providers, blocks


def three_province_fixture():
    """Blocks in 3 provinces with values placed on the filter edges (350 inh., 350/km2)."""
    rng = np.random.default_rng(11)
    rows = []
    for p in range(3):
        for loc in range(5):
            for b in range(6):
                pop = float(rng.choice([349, 350, 351, 800, 2000, 120]))
                area = float(rng.choice([pop / 350.0, pop / 349.0, pop / 351.0, 0.5, 3.0]))
                rows.append({"block_id": f"P{p}L{loc}B{b}", "province": f"P{p}", "locality": f"L{p}{loc}",
                             "population": pop, "area_km2": area,
                             "AI": float(rng.choice([0.0, rng.uniform(0, 1), 0.9, 0.95])),
                             "endemic": bool(loc == 4 and b < 3)})
    return pd.DataFrame(rows)


@pytest.fixture(scope="session")
def small_world(tmp_path_factory):
    """A written synthetic world (seed 1) and its config path."""
    from chppi.synth import WorldScale, generate_synthetic_world, write_world
    world = generate_synthetic_world(1, WorldScale(blocks=120, users=1500, providers=20))
    cfg = write_world(world, tmp_path_factory.mktemp("small_world"))
    return world, cfg


def load_json(p):
    return json.loads(Path(p).read_text())

import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from twinguard.errors import (CountMismatch, DuplicatePath, MissingSensor, PathIsContainer, PathNotFound,
                              UnsupportedKeyword, YangSyntaxError)
from twinguard.yang import (Container, Leaf, YangModule, build_manifest, default_modules, extract_features,
                            load_manifest, parse_module, print_module, read_manifest_spec, resolve_path)

SMALL = """
module demo {
  namespace "urn:demo";
  // a line comment
  container stats {
    /* block
       comment */
    leaf rx { type counter; }
    leaf load { type gauge; description "1-min load"; }
  }
}
"""


def test_parse_small_module():
    m = parse_module(SMALL)
    assert m.name == "demo" and m.namespace == "urn:demo"
    assert [p for p, _ in m.leaves()] == ["/stats/rx", "/stats/load"]
    assert [leaf.leaf_type for _, leaf in m.leaves()] == ["counter", "gauge"]


def test_rpc_rejected_with_line():
    text = 'module m {\n  namespace "u";\n  rpc ping {}\n}\n'
    with pytest.raises(UnsupportedKeyword) as exc:
        parse_module(text)
    assert exc.value.keyword == "rpc" and exc.value.line == 3


@pytest.mark.parametrize("kw", ["notification", "grouping", "augment", "when", "must"])
def test_other_unsupported_keywords(kw):
    with pytest.raises(UnsupportedKeyword):
        parse_module(f'module m {{ namespace "u"; container c {{ {kw} x {{}} }} }}')


@pytest.mark.parametrize("text, line", [
    ('module m { namespace "u"; container c { leaf x { type float; } } }', 1),
    ('module m {\n namespace "u";\n container c {\n leaf x { type int }\n } }', 4),
    ('module m { namespace "u"; container c { leaf x { type int; } }', 1),
    ('module m { namespace "u"; container c { leaf x { type int; } leaf x { type int; } } }', 1),
])
def test_syntax_errors_carry_position(text, line):
    with pytest.raises(YangSyntaxError) as exc:
        parse_module(text)
    assert exc.value.line == line and exc.value.col >= 1


def test_default_path_resolves_as_counter():
    d = resolve_path(default_modules(), "/kpi1/iface/in-octets")
    assert d.leaf_type == "counter"


def test_container_and_missing_paths():
    mods = default_modules()
    with pytest.raises(PathIsContainer):
        resolve_path(mods, "/kpi1/iface")
    with pytest.raises(PathNotFound):
        resolve_path(mods, "/nope/x")
    with pytest.raises(PathNotFound):
        resolve_path(mods, "kpi1/iface/in-octets")


def test_default_manifest_cardinalities(manifest):
    assert len(manifest) == 92
    assert manifest.count("KPI1") == 37 and manifest.count("KPI2") == 55
    assert len(set(manifest.paths)) == 92


def test_duplicate_path_and_empty_spec():
    mods = default_modules()
    with pytest.raises(DuplicatePath):
        build_manifest(mods, [("/kpi1/iface/in-octets", "KPI1"), ("/kpi1/iface/in-octets", "KPI1")])
    assert len(build_manifest(mods, [])) == 0


def test_declared_counts_must_agree():
    text = "# expect KPI1=2\npath,kpi,source_column\n/kpi1/iface/in-octets,KPI1,a\n"
    entries, expected = read_manifest_spec(text)
    with pytest.raises(CountMismatch):
        build_manifest(default_modules(), entries, expected)


def test_custom_spec_file(tmp_path):
    spec = tmp_path / "m.csv"
    spec.write_text("# expect KPI1=1 KPI2=1\npath,kpi,source_column\n"
                    "/kpi2/queue/drops,KPI2,q\n/kpi1/iface/in-octets,KPI1,o\n")
    m = load_manifest(spec)
    assert m.paths == ("/kpi2/queue/drops", "/kpi1/iface/in-octets")
    assert m.source_columns == ("q", "o")


def frame_for(manifest, seed=0):
    rng = np.random.default_rng(seed)
    return {p: float(v) for p, v in zip(manifest.paths, rng.normal(size=len(manifest)))}


def test_extract_in_manifest_order(manifest):
    frame = frame_for(manifest)
    fv = extract_features(manifest, frame, twin_id=3, timestamp=5)
    assert len(fv) == 92 and fv.twin_id == 3 and fv.timestamp == 5
    assert list(fv.values) == [frame[p] for p in manifest.paths]


def test_extract_missing_sensor(manifest):
    frame = frame_for(manifest)
    del frame[manifest.paths[10]]
    with pytest.raises(MissingSensor) as exc:
        extract_features(manifest, frame)
    assert exc.value.path == manifest.paths[10]


@given(st.randoms(use_true_random=False))
def test_extract_ignores_insertion_order(manifest, rnd):
    frame = frame_for(manifest)
    items = list(frame.items())
    rnd.shuffle(items)
    a = extract_features(manifest, frame).values
    b = extract_features(manifest, dict(items)).values
    assert np.array_equal(a, b)


names = st.from_regex(r"[a-z][a-z0-9-]{0,6}", fullmatch=True).filter(
    lambda s: s not in {"module", "namespace", "container", "leaf", "type", "description",
                        "units", "prefix"} and not s.endswith("-"))


@st.composite
def trees(draw, depth=1):
    n = draw(st.integers(1, 4))
    kids = draw(st.lists(names, min_size=n, max_size=n, unique=True))
    out = []
    for k in kids:
        if depth < 5 and draw(st.booleans()):
            out.append(Container(k, tuple(draw(trees(depth + 1)))))
        else:
            out.append(Leaf(k, draw(st.sampled_from(["int", "decimal", "counter", "gauge"]))))
    return out


@given(names, trees(), st.text(alphabet='abc:/"\\ é', max_size=12))
def test_print_parse_round_trip(name, body, ns):
    module = YangModule(name, ns, tuple(Container("root", tuple(body)) for _ in [0]))
    if sum(1 for _ in module.leaves()) > 50:
        return
    text = print_module(module)
    again = parse_module(text)
    assert again == module
    assert print_module(again) == text

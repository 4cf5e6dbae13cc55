import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsdm3.cli import bundled_tree_path
from dsdm3.newick import NewickError, parse_newick, read_newick, to_newick


def test_basic():
    t = parse_newick("((A:0.1,B:0.2)ab:0.3,C);")
    assert t.leaf_names == ["A", "B", "C"]
    assert [n.name for n in t.internal_nodes()] == [None, "ab"]
    assert t.leaves()[1].length == 0.2


def test_quoted_labels_round_trip():
    t = parse_newick("('it''s a leaf',B);")
    assert t.leaf_names == ["it's a leaf", "B"]
    assert parse_newick(to_newick(t)).leaf_names == t.leaf_names


def test_whitespace_allowed():
    assert parse_newick(" ( A , B ) ;\n").leaf_names == ["A", "B"]


@pytest.mark.parametrize("text,msg", [
    ("(A,B", "unbalanced parenthesis"),
    ("(A,,B);", "unlabelled leaf"),
    ("(A);", "single child"),
    ("(A,A);", "duplicate"),
    ("(A,B);x", "trailing"),
    ("[c](A,B);", "comments"),
    ("(A,B)", "expected ';'"),
    ("(A:x,B);", "branch length"),
    ("A;", "two leaves"),
])
def test_rejects(text, msg):
    with pytest.raises(NewickError, match=msg):
        parse_newick(text)


def test_error_offset():
    with pytest.raises(NewickError) as info:
        parse_newick("(A,B")
    assert info.value.offset == 4
    assert str(info.value).endswith("at offset 4")


def test_bundled_tree():
    t = read_newick(bundled_tree_path())
    assert len(t.leaves()) == 79


names = st.text(alphabet="abcXYZ_0123'. ", min_size=1, max_size=6)


@st.composite
def trees(draw, depth=3):
    counter = draw(st.integers(0, 10**6))
    labels = iter(f"t{counter}_{i}" for i in range(10**6))

    def build(d):
        if d == 0 or draw(st.booleans()):
            return next(labels)
        k = draw(st.integers(2, 3))
        return "(" + ",".join(build(d - 1) for _ in range(k)) + ")"

    return "(" + build(depth) + "," + build(depth) + ");"


@given(trees())
def test_round_trip(text):
    t = parse_newick(text)
    assert to_newick(t) == text
    assert parse_newick(to_newick(t)).leaf_names == t.leaf_names


@given(names)
def test_label_round_trip(label):
    t = parse_newick(to_newick(parse_newick("(x,y);")).replace("x", "'" + label.replace("'", "''") + "'"))
    assert t.leaf_names[0] == label
    assert parse_newick(to_newick(t)).leaf_names[0] == label

import io

import numpy as np
import pytest

from scmyth.io import PanelFormatError, dumps_json, panel_to_csv, read_panel_csv
from scmyth.panel import PanelData

GOOD = """unit,time,treated,post,outcome,x
A,1,1,0,1.0,0.5
A,2,1,0,2.0,0.25
A,3,1,1,3.5,0.125
B,1,0,0,1.0,0.1
B,2,0,0,2.0,0.2
B,3,0,1,3.0,0.3
C,1,0,0,0.0,1.0
C,2,0,0,1.0,2.0
C,3,0,1,2.0,3.0
"""


def parse(text):
    return read_panel_csv(io.StringIO(text))


def test_parse_good():
    p = parse(GOOD)
    assert p.unit_ids == ("A", "B", "C") and p.t0 == 2 and p.treated_unit == 0
    np.testing.assert_array_equal(p.times, [1, 2, 3])
    np.testing.assert_array_equal(p.outcome[:, 1], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(p.covariate("x")[:, 2], [1.0, 2.0, 3.0])


def test_treated_unit_need_not_be_first():
    lines = GOOD.splitlines()
    text = "\n".join([lines[0]] + lines[4:] + lines[1:4]) + "\n"
    p = parse(text)
    assert p.unit_ids[p.treated_unit] == "A"


def test_roundtrip_exact(small_panel, tmp_path):
    panel, _ = small_panel
    path = tmp_path / "p.csv"
    text = panel_to_csv(panel, path)
    back = read_panel_csv(path)
    np.testing.assert_array_equal(back.outcome, panel.outcome)
    for c in panel.covariates:
        np.testing.assert_array_equal(back.covariate(c), panel.covariate(c))
    assert back.t0 == panel.t0 and back.unit_ids == panel.unit_ids
    assert panel_to_csv(back) == text


@pytest.mark.parametrize(
    "edit, line, column",
    [
        (lambda t: t.replace("B,2,0,0,2.0,0.2", "B,2,0,0,abc,0.2"), 6, "outcome"),
        (lambda t: t.replace("C,1,0,0,0.0,1.0", "C,1,0,0,0.0,nan"), 8, "x"),
        (lambda t: t.replace("B,3,0,1,3.0,0.3", "B,3,0,1,3.0"), 7, None),
        (lambda t: t.replace("B,1,0,0,1.0,0.1", "B,1,2,0,1.0,0.1"), 5, "treated"),
        (lambda t: t.replace("B,3,0,1,3.0,0.3", "B,3,0,0,3.0,0.3"), 7, "post"),
        (lambda t: t.replace("C,2,0,0,1.0,2.0", "C,1,0,0,1.0,2.0"), 9, None),
        (lambda t: t.replace("B,2,0,0", "B,2,1,0"), 6, "treated"),
    ],
)
def test_errors_name_line_and_column(edit, line, column):
    with pytest.raises(PanelFormatError) as err:
        parse(edit(GOOD))
    assert err.value.line == line
    assert err.value.column == column
    assert f"line {line}" in str(err.value)


@pytest.mark.parametrize(
    "text, needle",
    [
        ("", "empty"),
        ("unit,time,treated,outcome\n", "post"),
        (GOOD.replace("A,1,1", "A,1,0").replace("A,2,1", "A,2,0").replace("A,3,1", "A,3,0"), "one treated"),
        (GOOD.replace(",0,1,", ",0,0,").replace("A,3,1,1", "A,3,1,0"), "post"),
        ("\n".join(GOOD.splitlines()[:-1]) + "\n", "unbalanced"),
    ],
)
def test_structural_errors(text, needle):
    with pytest.raises(PanelFormatError, match=needle):
        parse(text)


def test_dumps_json_is_stable():
    doc = {"b": np.float64(1.5), "a": [np.int64(2), float("nan")], "c": np.arange(2.0)}
    out = dumps_json(doc)
    assert out == dumps_json(dict(reversed(list(doc.items()))))
    assert '"a": [\n  2,\n  null\n ]' in out


def test_non_integer_times():
    text = GOOD.replace("A,1,", "A,1.5,").replace("B,1,", "B,1.5,").replace("C,1,", "C,1.5,")
    p = parse(text)
    assert list(p.times) == [1.5, 2.0, 3.0]

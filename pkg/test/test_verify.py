import io

import pytest
from rich.console import Console

from modules.verify import LEVELS, VerifyReport, render_report, verify


def _corrupt(table):
    table[3] *= 1.01
    table[-3] *= 1.01
    return table


class TestVerifyReport:
    def test_pass_and_fail_directions(self):
        report = VerifyReport("fast")
        report.add("small", 1e-14, 1e-12)
        report.add("large", 5.0, 3.7, upper=False)
        assert report.passed
        report.add("nan", float("nan"), 1.0)
        assert not report.passed
        assert [c.name for c in report.failures] == ["nan"]


class TestVerify:
    def test_fast_level_passes(self):
        report = verify("fast")
        assert report.passed, [c.name for c in report.failures]
        names = {c.name for c in report.checks}
        assert {"phi_min_closed_form", "multiplier_homogeneity", "lphi_vs_quadrature"} <= names

    def test_corrupted_multiplier_is_caught(self):
        report = verify("fast", multiplier_hook=_corrupt)
        assert "multiplier_homogeneity" in [c.name for c in report.failures]

    def test_unknown_level(self):
        with pytest.raises(ValueError):
            verify("thorough")
        assert LEVELS == ("fast", "full")

    def test_render(self):
        buffer = io.StringIO()
        render_report(verify("fast"), Console(file=buffer, width=120))
        assert "phi_min_closed_form" in buffer.getvalue()


@pytest.mark.slow
class TestFullVerify:
    def test_full_level_passes(self):
        report = verify("full")
        assert report.passed, [c.name for c in report.failures]

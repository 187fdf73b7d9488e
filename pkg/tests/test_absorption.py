import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from thzlab import absorption as A
from thzlab.errors import FrequencyOutOfDomain, InsufficientData, InvalidConfig

GHZ = 1e9
F_LO, F_HI = 752 * GHZ, 802 * GHZ


class TestEvaluate:
    def test_exponential_zero_exponent(self):
        m = A.ExponentialAbsorption(0.0, 0.0, 0.5, 700 * GHZ, 900 * GHZ)
        assert A.evaluate(m, 812.3 * GHZ) == pytest.approx(1.5, rel=1e-15)

    def test_linear_table_midpoint(self):
        tab = A.AbsorptionTable([600 * GHZ, 610 * GHZ], [1.0, 3.0])
        m = A.TableAbsorption(tab, A.Interpolation.LINEAR)
        assert A.evaluate(m, 605 * GHZ) == pytest.approx(2.0, rel=1e-15)

    @pytest.mark.parametrize("interp", list(A.Interpolation))
    def test_out_of_domain_is_an_error(self, interp):
        tab = A.AbsorptionTable([600 * GHZ, 610 * GHZ, 620 * GHZ], [1.0, 3.0, 2.0])
        m = A.TableAbsorption(tab, interp)
        with pytest.raises(FrequencyOutOfDomain):
            m(599 * GHZ)
        with pytest.raises(FrequencyOutOfDomain):
            m(np.array([605 * GHZ, 621 * GHZ]))

    def test_linear_exact_at_knots(self, smooth_table):
        m = A.TableAbsorption(smooth_table, A.Interpolation.LINEAR)
        assert np.array_equal(m(smooth_table.frequency), smooth_table.k)

    def test_monotone_cubic_exact_at_knots(self, smooth_table):
        m = A.TableAbsorption(smooth_table)
        np.testing.assert_allclose(m(smooth_table.frequency), smooth_table.k, rtol=1e-14)

    def test_synthetic_formula(self):
        base = A.ExponentialAbsorption(1.5, -2e-11, 0.1, F_LO, F_HI)
        m = A.SyntheticAbsorption(base, 0.02, 7 * GHZ)
        f = np.linspace(F_LO, F_HI, 11)
        expected = np.maximum(np.exp(1.5 - 2e-11 * f) + 0.1 + 0.02 * np.sin(2 * np.pi * f / (7 * GHZ)), 0)
        np.testing.assert_allclose(m(f), expected, rtol=1e-14)

    def test_synthetic_clamps_at_zero(self):
        base = A.ExponentialAbsorption(-30.0, 0.0, 0.01, F_LO, F_HI)
        m = A.SyntheticAbsorption(base, 0.05, 3 * GHZ)
        k = m(np.linspace(F_LO, F_HI, 501))
        assert k.min() == 0.0


class TestModelValidation:
    def test_negative_exponential_rejected(self):
        with pytest.raises(InvalidConfig):
            A.ExponentialAbsorption(0.0, 0.0, -2.0, F_LO, F_HI)

    @pytest.mark.parametrize("freq,k", [
        ([1.0, 1.0, 2.0], [1.0, 1.0, 1.0]),
        ([2.0, 1.0], [1.0, 1.0]),
        ([1.0], [1.0]),
        ([1.0, 2.0], [1.0, -0.1]),
    ])
    def test_bad_tables(self, freq, k):
        with pytest.raises(InvalidConfig):
            A.AbsorptionTable(freq, k)

    def test_table1_presets_warn(self):
        with pytest.warns(UserWarning, match="ambiguous units"):
            eta = A.table1_preset("sr_n2")
        assert eta == A.TABLE1_ETA["sr_n2"]
        lo, hi = A.TABLE1_WINDOWS["sr_n2"]
        with pytest.raises(InvalidConfig):
            A.ExponentialAbsorption(*eta, lo, hi)


@given(
    eta1=st.floats(-5, 5), eta2=st.floats(-1e-10, 1e-10), eta3=st.floats(0, 1),
    u=st.floats(0, 1),
)
def test_exponential_nonnegative(eta1, eta2, eta3, u):
    m = A.ExponentialAbsorption(eta1, eta2, eta3, F_LO, F_HI)
    assert m(F_LO + u * (F_HI - F_LO)) >= 0


@given(seed=st.integers(0, 2**32 - 1), u=st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_table_models_nonnegative(seed, u):
    rng = np.random.default_rng(seed)
    f = np.sort(rng.choice(np.arange(200), size=12, replace=False)).astype(float) * GHZ
    k = rng.exponential(1.0, size=12) * (rng.uniform(size=12) > 0.3)
    tab = A.AbsorptionTable(f, k)
    q = f[0] + np.asarray(u) * (f[-1] - f[0])
    for interp in A.Interpolation:
        assert np.all(A.TableAbsorption(tab, interp)(q) >= 0)


class TestCsv:
    def test_round_trip(self, smooth_table, tmp_path):
        path = tmp_path / "k.csv"
        smooth_table.to_csv(path)
        assert path.read_text().splitlines()[0] == "frequency_hz,k_per_m"
        back = A.AbsorptionTable.from_csv(path)
        assert np.array_equal(back.frequency, smooth_table.frequency)
        assert np.array_equal(back.k, smooth_table.k)

    def test_duplicates_rejected(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text("frequency_hz,k_per_m\n1e12,0.1\n1e12,0.2\n1.1e12,0.3\n")
        with pytest.raises(InvalidConfig):
            A.AbsorptionTable.from_csv(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "hdr.csv"
        path.write_text("f,k\n1e12,0.1\n1.1e12,0.2\n")
        with pytest.raises(InvalidConfig):
            A.AbsorptionTable.from_csv(path)


class TestFit:
    def test_round_trip_against_generator(self):
        # k = exp(2 - 4 (f - f0) / B) over a 50 GHz span; evaluate at the centre
        f0, span = F_LO, 50 * GHZ
        f = np.linspace(f0, f0 + span, 2001)
        tab = A.AbsorptionTable(f, np.exp(2 - 4 * (f - f0) / span), A.Region.NACSR)
        model, err = A.fit_exponential(tab, f0, f0 + span)
        fc = f0 + 25 * GHZ
        assert model(fc) == pytest.approx(math.exp(2 - 4 * 25 / 50), rel=1e-9)
        assert err < 1e-8

    def test_recovers_generating_eta(self):
        eta = (1.5, -2e-11, 0.1)
        f = np.linspace(F_LO, F_HI, 1024)
        tab = A.AbsorptionTable(f, np.exp(eta[0] + eta[1] * f) + eta[2])
        model, err = A.fit_exponential(tab, F_LO, F_HI)
        np.testing.assert_allclose(model.eta, eta, rtol=1e-6)
        assert err < 1e-8
        assert model.domain == (F_LO, F_HI)

    def test_ripple_flags_poor_fit(self):
        base = A.ExponentialAbsorption(1.5, -2e-11, 0.1, F_LO, F_HI)
        mean_k = float(np.mean(base(np.linspace(F_LO, F_HI, 1001))))
        syn = A.SyntheticAbsorption(base, 0.25 * mean_k, 9 * GHZ)
        _, err = A.fit_exponential(A.tabulate(syn, n=1024), F_LO, F_HI)
        assert err > 0.05

    def test_constant_table(self):
        c = 0.37
        f = np.linspace(F_LO, F_HI, 64)
        model, err = A.fit_exponential(A.AbsorptionTable(f, np.full(64, c)), F_LO, F_HI)
        assert model.eta2 == 0.0
        assert model.eta3 == pytest.approx(c, rel=1e-9)
        assert math.exp(model.eta1) < 1e-9 * c
        assert err < 1e-6

    def test_idempotent(self, smooth_table):
        m1, _ = A.fit_exponential(smooth_table, F_LO, F_HI)
        regenerated = A.tabulate(m1, F_LO, F_HI, n=1024)
        m2, err = A.fit_exponential(regenerated, F_LO, F_HI)
        np.testing.assert_allclose(m2.eta, m1.eta, rtol=1e-6)
        assert err < 1e-8

    def test_fit_stays_nonnegative_on_shoulder_shaped_data(self):
        # a flat shoulder followed by a steep drop: the unconstrained optimum
        # dips below zero, so the fitter must fall back to a valid model
        f = np.linspace(F_LO, F_HI, 1024)
        x = f - F_LO
        k = 0.006 + 0.08 / (1 + np.exp((x - 15 * GHZ) / (2.5 * GHZ)))
        model, err = A.fit_exponential(A.AbsorptionTable(f, k), F_LO, F_HI)
        assert np.all(model(f) >= 0)
        assert np.isfinite(err)

    def test_needs_data(self):
        f = np.linspace(F_LO, F_HI, 3)
        with pytest.raises(InsufficientData):
            A.fit_exponential(A.AbsorptionTable(f, [3.0, 2.0, 1.0]), F_LO, F_HI)
        f = np.linspace(F_LO, F_HI, 30)
        with pytest.raises(InsufficientData):
            A.fit_exponential(A.AbsorptionTable(f, np.ones(30)), F_LO - GHZ, F_HI)


class TestSynthesize:
    @pytest.mark.parametrize("seed", [0, 7, 8, 9, 123])
    def test_smooth_fits_within_five_percent(self, seed):
        tab = A.synthesize_nacsr((F_LO, F_HI), A.Profile.SMOOTH_EXPONENTIAL, seed)
        _, err = A.fit_exponential(tab, F_LO, F_HI)
        assert err <= 0.05

    @pytest.mark.parametrize("seed", [0, 7, 8, 9, 123])
    def test_wiggly_does_not_fit(self, seed):
        tab = A.synthesize_nacsr((F_LO, F_HI), A.Profile.WIGGLY, seed)
        _, err = A.fit_exponential(tab, F_LO, F_HI)
        assert err >= 0.20

    @pytest.mark.parametrize("profile", list(A.Profile))
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_table_shape(self, profile, seed):
        tab = A.synthesize_nacsr((F_LO, F_HI), profile, seed)
        assert len(tab) >= 512
        assert np.all(tab.k > 0)
        assert np.all(np.diff(tab.frequency) > 0)
        assert tab.region is A.Region.NACSR
        assert tab.trend_slope() < 0

    def test_deterministic(self):
        a = A.synthesize_nacsr((F_LO, F_HI), A.Profile.WIGGLY, 5)
        b = A.synthesize_nacsr((F_LO, F_HI), A.Profile.WIGGLY, 5)
        assert np.array_equal(a.k, b.k)


class TestSerialisation:
    @pytest.mark.parametrize("model", [
        A.ExponentialAbsorption(1.5, -2e-11, 0.1, F_LO, F_HI),
        A.SyntheticAbsorption(A.ExponentialAbsorption(1.5, -2e-11, 0.1, F_LO, F_HI), 0.01, 5 * GHZ),
        A.TableAbsorption(A.AbsorptionTable([F_LO, 780 * GHZ, F_HI], [0.3, 0.2, 0.1])),
    ])
    def test_dict_round_trip(self, model):
        back = A.model_from_dict(A.model_to_dict(model))
        f = np.linspace(F_LO, F_HI, 17)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            np.testing.assert_array_equal(back(f), model(f))

"""Exception hierarchy shared across the package."""


class ReddscError(Exception):
    """Base class for all errors raised by reddsc."""


# ingestion -----------------------------------------------------------------


class PanelError(ReddscError, ValueError):
    """Input panel data violates a structural invariant."""


class MissingColumn(PanelError):
    def __init__(self, path, missing):
        self.path = str(path)
        self.missing = tuple(missing)
        super().__init__(f"{self.path}: missing required column(s) {', '.join(self.missing)}")


class NonMonotoneSeries(PanelError):
    def __init__(self, site_id, year, series="cum_defor_ha"):
        self.site_id = site_id
        self.year = year
        super().__init__(f"site {site_id!r}: {series} decreases at year {year}")


class SeriesExceedsArea(PanelError):
    def __init__(self, site_id, year, value, area_ha):
        self.site_id = site_id
        self.year = year
        super().__init__(
            f"site {site_id!r}: cumulative deforestation {value:g} ha exceeds area {area_ha:g} ha in {year}"
        )


class YearGap(PanelError):
    def __init__(self, site_id, missing_years):
        self.site_id = site_id
        self.missing_years = tuple(missing_years)
        super().__init__(f"site {site_id!r}: missing interior year(s) {list(self.missing_years)}")


class DuplicateSiteId(PanelError):
    def __init__(self, site_id):
        self.site_id = site_id
        super().__init__(f"duplicate site_id {site_id!r}")


class YearOutOfDomain(ReddscError, KeyError):
    def __init__(self, years, domain=None):
        self.years = years
        msg = f"year(s) {years} outside the data domain"
        if domain is not None:
            msg += f" {domain[0]}..{domain[-1]}" if len(domain) else " (empty)"
        super().__init__(msg)

    def __str__(self):
        return self.args[0]


# donor pool ----------------------------------------------------------------


class EmptyPool(ReddscError):
    pass


class ZeroProjectBuffer(ReddscError):
    """Project buffer deforestation is zero; relative deviation is undefined."""


# solver --------------------------------------------------------------------


class SolverDiverged(ReddscError):
    pass


class IllConditioned(ReddscError):
    pass


class InsufficientTraining(ReddscError):
    pass


# validation / inference ----------------------------------------------------


class WindowOutOfRange(ReddscError):
    pass


class EmptyWindow(ReddscError):
    pass


class NoPostYears(ReddscError):
    pass


class TooFewDonors(ReddscError):
    pass


# bias / credits / simulation ----------------------------------------------


class DeforestationExceedsArea(ReddscError, ValueError):
    pass


class ZeroBaseline(ReddscError, ZeroDivisionError):
    pass


class ZeroDenominator(ReddscError, ZeroDivisionError):
    pass


class InfeasibleEffect(ReddscError):
    pass

"""Exception hierarchy shared by all esdirk modules."""


class EsdirkError(Exception):
    """Base class for every error raised by this package."""


class UnknownMethodError(EsdirkError, LookupError):
    def __init__(self, name, valid):
        self.name = name
        self.valid = tuple(valid)
        super().__init__(f"unknown method {name!r}; valid names: {', '.join(self.valid)}")


class UnknownExtensionError(EsdirkError, LookupError):
    def __init__(self, name, variant, catalog):
        self.catalog = tuple(catalog)
        listing = ", ".join(f"{m}/{v}" for m, v in self.catalog)
        super().__init__(f"no continuous extension {name}/{variant}; catalog: {listing}")


class TableauParseError(EsdirkError, ValueError):
    def __init__(self, message, line, column=None):
        self.line = line
        self.column = column
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{where}: {message}")


class DegenerateTableauError(EsdirkError, ValueError):
    pass


class UnsupportedOrderError(EsdirkError, ValueError):
    pass


class InfeasibleError(EsdirkError):
    """A linear coefficient system has no solution within tolerance."""

    def __init__(self, message, residual, block=None):
        self.residual = residual
        self.block = block
        super().__init__(f"{message} (relative residual {residual:.3e}"
                         + (f", worst block {block})" if block else ")"))


class OutOfRangeError(EsdirkError, ValueError):
    pass


class UnsupportedMethodError(EsdirkError, ValueError):
    pass


class NotIndexOneError(EsdirkError):
    pass


class InconsistentInitialConditionsError(EsdirkError):
    def __init__(self, residual, tol):
        self.residual = residual
        super().__init__(f"algebraic residual {residual:.3e} exceeds tolerance {tol:.3e}")


class NewtonConvergenceError(EsdirkError):
    """Raised by the stage solver; the caller should cut h and refactor."""

    def __init__(self, report, reason):
        self.report = report
        self.reason = reason
        super().__init__(f"Newton iteration failed ({reason}) after {report.iterations} iterations")


class ConvergenceError(EsdirkError):
    """Fixed-step integration hit a stage that Newton could not solve."""

    def __init__(self, step_index, t, cause=None):
        self.step_index = step_index
        self.t = t
        super().__init__(f"Newton failure at step {step_index} (t={t:.17g})")


class StepSizeUnderflowError(EsdirkError):
    def __init__(self, t, h, x):
        self.t, self.h, self.x = t, h, x
        super().__init__(f"step size {h:.3e} underflow at t={t:.17g}")


class BudgetExceededError(EsdirkError):
    def __init__(self, max_steps, t):
        self.max_steps = max_steps
        self.t = t
        super().__init__(f"max_steps={max_steps} exhausted at t={t:.17g}")

"""Exception types shared across the package."""


class LearnError(Exception):
    """Base class for all domain errors raised by this package."""


# -- geometry / embeddings -------------------------------------------------

class OutOfRange(LearnError):
    """A box coordinate violates the unit-canvas invariants beyond tolerance."""


class NonFinite(LearnError):
    """A value is NaN or infinite where a finite number is required."""


class DimensionMismatch(LearnError):
    """Vector or parameter dimensions do not agree."""


class ZeroVector(LearnError):
    """An operation requiring a nonzero vector received (numerically) zero."""


# -- encoders ----------------------------------------------------------------

class EmptyInput(LearnError):
    """An empty string or empty collection where content is required."""


class BackendUnavailable(LearnError):
    """The requested encoder backend cannot be loaded."""


class BadShape(LearnError):
    """An image or tensor has the wrong shape."""


class EmptyCrop(LearnError):
    """A bounding box produced a zero-area pixel crop."""


# -- losses -------------------------------------------------------------------

class MismatchedLengths(LearnError):
    """Paired embedding sequences differ in length."""


class AllMasked(LearnError):
    """Stochastic augmentation zeroed every coordinate, repeatedly."""


# -- training -----------------------------------------------------------------

class EmptyDataset(LearnError):
    """A training routine was given no records."""


class NonFiniteLoss(LearnError):
    """Training produced a NaN/inf loss.

    Carries the step index at which the divergence was detected.
    """

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class UnknownLabel(LearnError):
    """A dataset label is missing from the configured vocabulary."""


# -- attention / sampling ------------------------------------------------------

class ShapeMismatch(LearnError):
    """Attention inputs have inconsistent shapes."""


class InvalidSteps(LearnError):
    """Requested sampling step count is outside the schedule."""


# -- prompt modulation ----------------------------------------------------------

class EmptyCandidates(LearnError):
    """Pseudo-prompt selection received no candidates."""


# -- concept graph ---------------------------------------------------------------

class ParseError(LearnError):
    """A graph or manifest file is malformed."""


class UnknownNodeInEdge(LearnError):
    """An edge references a node id that does not exist."""


class CycleDetected(LearnError):
    """The concept graph contains a cycle.

    ``cycle`` lists the node ids of one offending cycle, in order.
    """

    def __init__(self, cycle: list[str]):
        self.cycle = list(cycle)
        super().__init__(f"cycle detected: {' -> '.join(self.cycle)}")


class UnknownConcept(LearnError):
    """The requested concept id is not in the graph."""


class TraversalError(LearnError):
    """A model call failed while rendering a curriculum sequence.

    ``concept_id`` names the frame that failed; the original error is chained.
    """

    def __init__(self, concept_id: str, message: str = ""):
        self.concept_id = concept_id
        super().__init__(message or f"traversal failed at concept {concept_id!r}")


# -- metrics -------------------------------------------------------------------

class EmptyReferences(LearnError):
    """A region metric was given no reference masks."""


class TooFewSamples(LearnError):
    """A distribution metric needs at least two samples per set."""


class InsufficientSamples(LearnError):
    """Similarity statistics need at least one concept with two embeddings."""


# -- dataset ----------------------------------------------------------------------

class DuplicateId(LearnError):
    """Two manifest records share an id."""


class MissingImage(LearnError):
    """A manifest record references an image file that does not exist."""


class InvalidBox(LearnError):
    """A manifest region carries a box violating the unit-canvas invariants."""


class BadFractions(LearnError):
    """Split fractions are negative or do not sum to one."""


class AnnotatorUnavailable(LearnError):
    """No annotator is registered under the requested name."""


class SpecInvalid(LearnError):
    """A synthetic dataset spec is unsatisfiable."""

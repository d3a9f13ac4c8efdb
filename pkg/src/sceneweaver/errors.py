"""Exception hierarchy shared across the engine.

Every error type carries a failure category used by the CLI report:
scene_modeling, editing_modules, unsupported_function, or code_generation.
"""


class SceneWeaverError(Exception):
    """Base class for all engine errors."""

    category = "editing_modules"


# --- scene modeling -------------------------------------------------------

class SceneModelingError(SceneWeaverError):
    category = "scene_modeling"


class MissingFile(SceneModelingError):
    pass


class MalformedRecord(SceneModelingError):
    pass


class InvariantViolation(SceneModelingError):
    pass


class OutOfBounds(SceneModelingError):
    pass


class UnknownLabel(SceneModelingError):
    pass


class EmptySelection(SceneModelingError):
    pass


class EmptyMesh(SceneModelingError):
    pass


class NoEmittersFound(SceneModelingError):
    pass


# --- editing modules ------------------------------------------------------

class EditingModuleError(SceneWeaverError):
    category = "editing_modules"


class NoFlatSupport(EditingModuleError):
    pass


class Degenerate(EditingModuleError):
    pass


class NotWatertight(EditingModuleError):
    pass


class MultipleLoops(EditingModuleError):
    pass


class OpenBoundary(EditingModuleError):
    pass


class NoMatch(EditingModuleError):
    pass


class MissingMetadata(EditingModuleError):
    pass


class MissingHull(EditingModuleError):
    pass


class NonFiniteState(EditingModuleError):
    pass


class TooFewPoints(EditingModuleError):
    pass


class ConflictingTrack(EditingModuleError):
    pass


class ResolutionMismatch(EditingModuleError):
    pass


class IoError(EditingModuleError):
    pass


# --- unsupported function -------------------------------------------------

class UnsupportedFunction(SceneWeaverError):
    category = "unsupported_function"


# --- code generation ------------------------------------------------------

class CodeGenerationError(SceneWeaverError):
    category = "code_generation"


class DslSyntaxError(CodeGenerationError):
    def __init__(self, message, line, column, expected=()):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column
        self.expected = tuple(expected)


class ValidationFailed(CodeGenerationError):
    def __init__(self, diagnostics):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = list(diagnostics)


class RuntimeFault(SceneWeaverError):
    """Execution failure at a specific statement; wraps the module error."""

    def __init__(self, statement_index, cause):
        super().__init__(f"statement {statement_index}: {cause}")
        self.statement_index = statement_index
        self.cause = cause
        self.category = getattr(cause, "category", "editing_modules")


class NoProgramFound(CodeGenerationError):
    pass


class ExhaustedAttempts(CodeGenerationError):
    def __init__(self, transcripts):
        super().__init__(f"no valid program after {len(transcripts)} attempts")
        self.transcripts = list(transcripts)


class EndpointError(CodeGenerationError):
    pass


class UnparseableReply(EditingModuleError):
    def __init__(self, reply):
        super().__init__(f"could not parse scale reply: {reply!r}")
        self.reply = reply


class UnknownInstruction(CodeGenerationError):
    pass

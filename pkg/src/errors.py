class PmcmcError(Exception):
    """Base error carrying a human-readable detail and a process exit code"""

    kind = "pmcmc_error"

    def __init__(self, detail: str, exit_code: int = 1, field: str | None = None):
        super().__init__(detail)
        self.detail = detail
        self.exit_code = exit_code
        self.field = field

    def to_dict(self) -> dict:
        payload = {"error": self.kind, "detail": self.detail}
        if self.field is not None:
            payload["field"] = self.field
        return payload


class ConfigError(PmcmcError):
    kind = "config_error"

    def __init__(self, detail: str, field: str | None = None):
        super().__init__(detail, exit_code=2, field=field)


class ModelError(PmcmcError):
    kind = "model_error"


class ResamplingError(PmcmcError):
    kind = "resampling_error"


class FilterError(PmcmcError):
    kind = "filter_error"


class PrcError(PmcmcError):
    kind = "prc_error"


class SamplerError(PmcmcError):
    kind = "sampler_error"

"""
Contains the PathMappedCheck which takes its parameters from attribute paths of the screened item and from
constants bound at construction time.
"""

from typing import Any, Generator, Mapping, Optional

from frozendict import frozendict

from ..types import ItemT
from .check import CheckParameter, CheckParameters, EpochCheck, MappedCheck
from .query import required_field


class PathMappedCheck(MappedCheck[ItemT]):
    """
    Queries the item by the attribute paths in `param_map`. Parameters which describe the context rather than the
    item (e.g. thresholds or the gap list of a recording) are passed via `bound`.
    """

    def __init__(
        self,
        check: EpochCheck,
        param_map: Mapping[str, str],
        bound: Optional[Mapping[str, Any]] = None,
    ):
        super().__init__(check)
        self.param_map: frozendict[str, str] = frozendict(param_map)
        self.bound: frozendict[str, Any] = frozendict(bound or {})
        self._validate_param_maps()

    def _validate_param_maps(self):
        """
        Checks if the parameter maps match the check signature.
        """
        if overlap := set(self.param_map) & set(self.bound):
            raise ValueError(f"{self.check.name}: parameter(s) {overlap} are both mapped and bound")
        mapped_params = set(self.param_map) | set(self.bound)
        if not mapped_params <= self.check.param_names:
            raise ValueError(f"{self.check.name} has no parameter(s) {mapped_params - self.check.param_names}")
        if not self.check.required_param_names <= mapped_params:
            raise ValueError(f"{self.check.name} misses parameter(s) {self.check.required_param_names - mapped_params}")

    def __eq__(self, other):
        return (
            isinstance(other, PathMappedCheck)
            and self.check == other.check
            and self.param_map == other.param_map
            and self.bound.keys() == other.bound.keys()
            and all(self.bound[key] is other.bound[key] for key in self.bound)
        )

    def __hash__(self):
        return hash(self.param_map) + hash(self.check)

    def __str__(self):
        return f"PathMappedCheck({self.check.name}, {dict(self.param_map)}, bound={sorted(self.bound)})"

    def provide(self, item: ItemT) -> Generator[CheckParameters | Exception, None, None]:
        """
        Yields the single parameter list of this item. If a required attribute is missing, an error is yielded.
        """
        parameter_values: dict[str, CheckParameter] = {
            name: CheckParameter(mapped_check=self, name=name, param_id=f"<bound {name}>", value=value, provided=True)
            for name, value in self.bound.items()
        }
        for param_name, attr_path in self.param_map.items():
            try:
                value: Any = required_field(item, attr_path, Any)
                provided = True
            except AttributeError as error:
                if param_name in self.check.required_param_names:
                    query_error = AttributeError(f"{attr_path}: value not provided")
                    query_error.__cause__ = error
                    yield query_error
                    return
                value = self.check.signature.parameters[param_name].default
                provided = False
            parameter_values[param_name] = CheckParameter(
                mapped_check=self,
                name=param_name,
                param_id=attr_path,
                value=value,
                provided=provided,
            )
        yield CheckParameters(self, **parameter_values)

    def provision_indicator(self) -> dict[str, str]:
        return {
            param_name: "<bound>" if param_name in self.bound else f".{self.param_map.get(param_name, 'Unmapped')}"
            for param_name in self.check.param_names
        }

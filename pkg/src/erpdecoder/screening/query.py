"""
Contains helpers to query attributes by dotted paths.
"""

from typing import Any, TypeVar, overload

from typeguard import TypeCheckError, check_type

AttrT = TypeVar("AttrT")


@overload
def required_field(obj: Any, attribute_path: str, attribute_type: type[AttrT]) -> AttrT: ...


@overload
def required_field(obj: Any, attribute_path: str, attribute_type: Any) -> Any: ...


def required_field(obj: Any, attribute_path: str, attribute_type: Any) -> Any:
    """
    Queries `obj` along `attribute_path`. Raises an AttributeError naming the first missing part of the path and a
    TypeCheckError if the value doesn't match `attribute_type`.
    """
    current_obj: Any = obj
    splitted_path = attribute_path.split(".")
    for index, attr_name in enumerate(splitted_path):
        try:
            current_obj = getattr(current_obj, attr_name)
        except AttributeError as error:
            raise AttributeError(f"{'.'.join(splitted_path[0 : index + 1])}: Not found") from error
    try:
        check_type(current_obj, attribute_type)
    except TypeCheckError as error:
        raise TypeCheckError(f"{attribute_path}: {error}") from error
    return current_obj

"""YAML loading with _include and _use directives.

A run config or preset may pull other files in with

    _include: (armcmc)presets/defaults.yml

and reuse a section defined elsewhere with

    armcmc:
      _use: profiles.fast

Sections named in _use are merged first, then overridden by the content of
the section that uses them.
"""
import os.path
import importlib
import re
from collections.abc import Sequence
from typing import Any, Callable, Dict, List, Optional, Set, Tuple, Union

from omegaconf.omegaconf import OmegaConf
from omegaconf.dictconfig import DictConfig
from omegaconf.listconfig import ListConfig
from omegaconf.errors import OmegaConfBaseException
from yaml.error import YAMLError

from .exceptions import ConfigError

# paths to search for relative _include statements, after the including file's own directory
PATH = ['.']

# guards against _use/_include cycles
MAX_RECURSION = 20


def _lookup_nameseq(name_seq: List[str], source_dict: Dict):
    """Internal helper: looks up nested item ('a', 'b', 'c') in a nested dict, returns None if not found"""
    source = source_dict
    names = list(name_seq)
    while names:
        if not hasattr(source, "get"):
            return None
        source = source.get(names.pop(0), None)
        if source is None:
            return None
    return source


def _lookup_name(name: str, *sources: Dict):
    """Internal helper: looks up a nested item ("a.b.c") in a list of dicts

    Raises:
        NameError: if matching item is not found
    """
    name_seq = name.split(".")
    for source in sources:
        result = _lookup_nameseq(name_seq, source)
        if result is not None:
            return result
    raise NameError(f"unknown section {name}")


def resolve_include_path(incl: str, pathname: str, errloc: str) -> str:
    """Turns an _include specifier into a filename.

    Accepts "(module)relative/name.yml", an absolute path, or a path relative to the
    including file (then to each entry of PATH).
    """
    if not incl:
        raise ConfigError(f"{errloc}: empty _include specifier")

    match = re.match("^\\((.+)\\)(.+)$", incl)
    if match:
        modulename, filename = match.groups()
        try:
            mod = importlib.import_module(modulename)
        except ImportError as exc:
            raise ConfigError(f"{errloc}: _include {incl}: can't import {modulename}", nested=exc)
        filename = os.path.join(os.path.dirname(mod.__file__), filename)
        if not os.path.exists(filename):
            raise ConfigError(f"{errloc}: _include {incl}: {filename} does not exist")
        return filename

    if os.path.isabs(incl):
        if not os.path.exists(incl):
            raise ConfigError(f"{errloc}: _include {incl} does not exist")
        return incl

    paths = [os.path.dirname(pathname)] + PATH
    for path in paths:
        filename = os.path.join(path, incl)
        if os.path.exists(filename):
            return filename
    raise ConfigError(f"{errloc}: _include {incl} not found in {':'.join(paths)}")


def _resolve_config_refs(conf, pathname: str, location: Optional[str], name: str,
                         use_sources: Optional[List[DictConfig]]) -> Tuple[Any, Set[str]]:
    """Resolves "_use" and "_include" statements in a config object

    Args:
        conf: OmegaConf object
        pathname (str): path to this config, its directory anchors relative _includes
        location (str): location of this section, used in messages
        name (str): name of this config, used in messages
        use_sources: configs in which "_use" references are looked up, or None to leave them be

    Returns:
        Tuple of (conf, dependencies). conf may be a new object if anything was merged in.

    Raises:
        ConfigError: if a directive is malformed or cannot be resolved
    """
    errloc = f"config error at {location or 'top level'} in {name}"
    dependencies = set()

    if isinstance(conf, DictConfig):
        # _use and _include statements can bring in more of the same, so keep going until none are left
        updated = True
        recurse = 0
        while updated:
            updated = False
            recurse += 1
            if recurse > MAX_RECURSION:
                raise ConfigError(f"{errloc}: recursion limit exceeded, check your _use and _include statements")

            include_files = conf.get("_include", None)
            if include_files:
                del conf["_include"]
                updated = True
                if isinstance(include_files, str):
                    include_files = [include_files]
                elif not isinstance(include_files, (tuple, list, ListConfig)) or not all(isinstance(x, str) for x in include_files):
                    raise ConfigError(f"{errloc}: _include: must be a string or a list of strings")

                accum_incl_conf = OmegaConf.create()
                for incl in include_files:
                    filename = resolve_include_path(incl, pathname, errloc)
                    # _use statements in included files are expanded below, in the context of the includer
                    incl_conf, deps = load(filename, location=location,
                                           name=f"{filename}, included from {name}",
                                           use_sources=None)
                    dependencies.update(deps)
                    # later includes override earlier ones
                    accum_incl_conf = OmegaConf.unsafe_merge(accum_incl_conf, incl_conf)

                # our section overrides anything that has been included
                conf = OmegaConf.unsafe_merge(accum_incl_conf, conf)

            if use_sources is not None:
                merge_sections = conf.get("_use", None)
                if merge_sections:
                    del conf["_use"]
                    updated = True
                    if type(merge_sections) is str:
                        merge_sections = [merge_sections]
                    elif not isinstance(merge_sections, (Sequence, ListConfig)):
                        raise ConfigError(f"{errloc}: _use must be a string or a list of strings")
                    try:
                        merge_sections = [_lookup_name(section, *([conf] + use_sources)) for section in merge_sections]
                    except NameError as exc:
                        raise ConfigError(f"{errloc}: _use", nested=exc)
                    base = merge_sections[0].copy()
                    base.merge_with(*merge_sections[1:])
                    base, deps = _resolve_config_refs(base, pathname=pathname, name=name,
                                                      location=f"{location}._use" if location else "_use",
                                                      use_sources=[conf] + use_sources)
                    dependencies.update(deps)
                    base.merge_with(conf)
                    conf = base

        for key, value in conf.items_ex(resolve=False):
            if isinstance(value, (DictConfig, ListConfig)):
                value1, deps = _resolve_config_refs(value, pathname=pathname, name=name,
                                                    location=f"{location}.{key}" if location else key,
                                                    use_sources=None if use_sources is None else [conf] + use_sources)
                dependencies.update(deps)
                if value1 is not value:
                    conf[key] = value1

    elif isinstance(conf, ListConfig):
        for i, value in enumerate(conf._iter_ex(resolve=False)):
            if isinstance(value, (DictConfig, ListConfig)):
                value1, deps = _resolve_config_refs(value, pathname=pathname, name=name,
                                                    location=f"{location or ''}[{i}]",
                                                    use_sources=use_sources)
                dependencies.update(deps)
                if value1 is not value:
                    conf[i] = value1

    return conf, dependencies


def load(path: str, use_sources: Optional[List[DictConfig]] = [], name: Optional[str] = None,
         location: Optional[str] = None):
    """Loads config file, resolving _include and _use statements.

    Args:
        path (str): path to config file
        use_sources (Optional[List[DictConfig]]): existing configs used to resolve "_use" references
            (the loaded config itself is always searched first), or None to leave _use in place
        name (Optional[str]): name of this config file, used for error messages
        location (Optional[str]): location where this config is being loaded (if not at root level)

    Returns:
        Tuple of (conf, dependencies)
            conf (DictConfig): config object
            dependencies (set): set of filenames that were read
    """
    name = name or os.path.basename(path)
    try:
        subconf = OmegaConf.load(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found", nested=exc)
    except (OmegaConfBaseException, YAMLError) as exc:
        raise ConfigError(f"error parsing {name}", nested=exc)

    conf, deps = _resolve_config_refs(subconf, pathname=path, location=location, name=name,
                                      use_sources=use_sources)
    deps.add(os.path.abspath(path))
    return conf, deps


def load_nested(filelist: List[str],
                structured: Optional[DictConfig] = None,
                use_sources: Optional[List[DictConfig]] = [],
                location: Optional[str] = None,
                nameattr: Union[Callable, str, None] = None):
    """Builds a set of named configs (e.g. experiment presets) from a list of YAML files

    Args:
        filelist (List[str]): files to load
        structured (Optional[DictConfig]): schema merged underneath each file, if any
        use_sources: existing configs used to resolve "_use" references
        location (Optional[str]): used in messages
        nameattr (Union[Callable, str, None]): if None, each entry is named after the file's basename.
            A string names a field of the loaded config holding the entry name; a callable is
            given the loaded config and returns the name.

    Returns:
        Tuple of (content, dependencies): dict of name -> DictConfig, and the set of files read

    Raises:
        NameError: if an entry name cannot be resolved
        ConfigError: if a file does not fit the schema
    """
    section_content = {}
    dependencies = set()

    for path in filelist:
        subconf, deps = load(path, location=location, use_sources=use_sources)
        dependencies.update(deps)

        if nameattr is None:
            name = os.path.splitext(os.path.basename(path))[0]
        elif callable(nameattr):
            name = nameattr(subconf)
        elif nameattr in subconf:
            name = subconf.pop(nameattr)
        else:
            raise NameError(f"{path} does not contain a '{nameattr}' field")

        if structured is not None:
            try:
                subconf = OmegaConf.merge(structured, subconf)
            except (OmegaConfBaseException, YAMLError) as exc:
                raise ConfigError(f"schema error in {path}", nested=exc)

        section_content[name] = subconf

    return section_content, dependencies

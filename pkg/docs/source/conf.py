# Configuration file for the Sphinx documentation builder.
#
# https://www.sphinx-doc.org/en/master/usage/configuration.html

# -- Project information -----------------------------------------------------

project = "riskpde"
copyright = "2021-2024 Faculty Science Limited"
author = "Faculty"


# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.napoleon",
    "sphinx.ext.mathjax",
]

autodoc_default_options = {"members": True, "undoc-members": True}
autodoc_member_order = "bysource"
autosummary_generate = True

# numpy-style docstrings only
napoleon_google_docstring = False

exclude_patterns = []


# -- Options for HTML output -------------------------------------------------

html_theme = "sphinx_rtd_theme"
extensions.append("sphinx_rtd_theme")

html_theme_options = {"style_nav_header_background": "#1c1c1c"}

# Disable Sphinx attribution
html_show_sphinx = False

from documenteer.conf.guide import *

autodoc_pydantic_model_show_json = True
autodoc_pydantic_model_show_config = False
autodoc_pydantic_model_show_validator_summary = False
autodoc_pydantic_field_list_validators = False
